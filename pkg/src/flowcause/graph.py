"""Bipartite dataflow graphs: data streams wired through compute nodes.

A graph consists of named data streams and named compute nodes. Every edge
connects a stream to a node (the node consumes the stream) or a node to a
stream (the node produces it); the induced directed graph must be acyclic.
Stream and node identifiers live in disjoint namespaces and match
``[A-Za-z0-9_]+``. One stream is designated as the analysis target.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

_IDENTIFIER = re.compile(r"^[A-Za-z0-9_]+$")


class GraphParseError(ValueError):
    """Graph document is not valid JSON or does not match the schema."""


class GraphValidationError(ValueError):
    """A structurally well-formed graph breaks one or more invariants."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid dataflow graph: " + "; ".join(violations))
        self.violations = list(violations)


class CycleError(ValueError):
    """The requested operation needs an acyclic graph."""


class UnknownStreamError(KeyError):
    """A stream identifier is not part of the graph."""


@dataclass(frozen=True)
class ComputeNode:
    """One processing step: consumes ``inputs`` and produces ``outputs``."""

    id: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


@dataclass(frozen=True)
class DataflowGraph:
    """Immutable dataflow graph over streams and compute nodes.

    ``streams`` keeps declaration order, which fixes column order for
    datasets and tie-breaking for traversals. A stream may be produced by
    several nodes (merge) and consumed by several (fan-out).
    """

    streams: tuple[str, ...]
    nodes: tuple[ComputeNode, ...]
    target: str

    @cached_property
    def _stream_set(self) -> frozenset[str]:
        return frozenset(self.streams)

    @cached_property
    def _producers(self) -> dict[str, tuple[ComputeNode, ...]]:
        """Stream id -> nodes that output it, in node declaration order."""
        out: dict[str, list[ComputeNode]] = {s: [] for s in self.streams}
        for node in self.nodes:
            for s in node.outputs:
                if s in out:
                    out[s].append(node)
        return {s: tuple(v) for s, v in out.items()}

    def _check_stream(self, s: str) -> None:
        if s not in self._stream_set:
            raise UnknownStreamError(f"unknown stream {s!r}")

    def producers_of(self, s: str) -> tuple[ComputeNode, ...]:
        self._check_stream(s)
        return self._producers[s]

    def parent_list(self, s: str) -> tuple[str, ...]:
        """Parents of ``s`` in deterministic order.

        Producing nodes are visited in declaration order and their inputs in
        declared order; duplicates keep the first occurrence.
        """
        self._check_stream(s)
        seen: list[str] = []
        for node in self._producers[s]:
            for p in node.inputs:
                if p not in seen:
                    seen.append(p)
        return tuple(seen)

    def parents_of(self, s: str) -> set[str]:
        """Union of input streams over all nodes producing ``s``.

        Empty for root streams (external inputs).
        """
        return set(self.parent_list(s))

    def is_root(self, s: str) -> bool:
        return not self.parent_list(s)

    def ancestors_of_target(self, y: str) -> tuple[str, ...]:
        """Backward closure of ``y`` including ``y`` itself, in BFS order."""
        self._check_stream(y)
        order: list[str] = [y]
        seen = {y}
        queue = [y]
        while queue:
            s = queue.pop(0)
            for p in self.parent_list(s):
                if p not in seen:
                    seen.add(p)
                    order.append(p)
                    queue.append(p)
        return tuple(order)

    def topological_order(self) -> tuple[str, ...]:
        """All streams, parents before children, lexicographic tie-break.

        Raises :class:`CycleError` if the graph has a cycle.
        """
        import heapq

        children: dict[str, set[str]] = {s: set() for s in self.streams}
        indegree: dict[str, int] = {}
        for s in self.streams:
            parents = set(self.parent_list(s))
            indegree[s] = len(parents)
            for p in parents:
                children[p].add(s)
        ready = sorted(s for s in self.streams if indegree[s] == 0)
        heapq.heapify(ready)
        out: list[str] = []
        while ready:
            s = heapq.heappop(ready)
            out.append(s)
            for c in sorted(children[s]):
                indegree[c] -= 1
                if indegree[c] == 0:
                    heapq.heappush(ready, c)
        if len(out) != len(self.streams):
            stuck = sorted(s for s in self.streams if indegree[s] > 0)
            raise CycleError(f"cycle detected among streams: {', '.join(stuck)}")
        return tuple(out)

    def validate(self) -> list[str]:
        """Return all invariant violations, empty when the graph is valid.

        Violations are data, not exceptions; each one names the offending
        element.
        """
        violations: list[str] = []
        seen_streams: set[str] = set()
        for s in self.streams:
            if not _IDENTIFIER.match(s):
                violations.append(f"stream id {s!r} is not a valid identifier")
            if s in seen_streams:
                violations.append(f"duplicate stream id {s!r}")
            seen_streams.add(s)
        seen_nodes: set[str] = set()
        for node in self.nodes:
            if not _IDENTIFIER.match(node.id):
                violations.append(f"node id {node.id!r} is not a valid identifier")
            if node.id in seen_nodes:
                violations.append(f"duplicate node id {node.id!r}")
            seen_nodes.add(node.id)
            if node.id in seen_streams:
                violations.append(f"identifier {node.id!r} used for both a stream and a node")
            if not node.inputs:
                violations.append(f"node {node.id} has no inputs")
            if not node.outputs:
                violations.append(f"node {node.id} has no outputs")
            for s in node.inputs:
                if s not in seen_streams:
                    violations.append(f"node {node.id} consumes unknown stream {s!r}")
            for s in node.outputs:
                if s not in seen_streams:
                    violations.append(f"node {node.id} produces unknown stream {s!r}")
        if self.target not in seen_streams:
            violations.append(f"target {self.target} not a stream")
        if not violations:
            try:
                self.topological_order()
            except CycleError as err:
                violations.append(str(err))
        return violations

    def to_dict(self) -> dict:
        return {
            "streams": list(self.streams),
            "nodes": [
                {"id": n.id, "inputs": list(n.inputs), "outputs": list(n.outputs)}
                for n in self.nodes
            ],
            "target": self.target,
        }


def graph_from_dict(doc: object) -> DataflowGraph:
    """Build a graph from a decoded document, checking the schema strictly."""
    if not isinstance(doc, dict):
        raise GraphParseError("graph document must be a JSON object")
    extra = set(doc) - {"streams", "nodes", "target"}
    if extra:
        raise GraphParseError(f"unknown top-level keys: {', '.join(sorted(extra))}")
    missing = {"streams", "nodes", "target"} - set(doc)
    if missing:
        raise GraphParseError(f"missing top-level keys: {', '.join(sorted(missing))}")
    streams = doc["streams"]
    if not isinstance(streams, list) or not all(isinstance(s, str) for s in streams):
        raise GraphParseError("'streams' must be an array of strings")
    raw_nodes = doc["nodes"]
    if not isinstance(raw_nodes, list):
        raise GraphParseError("'nodes' must be an array of objects")
    nodes: list[ComputeNode] = []
    for i, entry in enumerate(raw_nodes):
        if not isinstance(entry, dict):
            raise GraphParseError(f"nodes[{i}] must be an object")
        extra = set(entry) - {"id", "inputs", "outputs"}
        if extra:
            raise GraphParseError(f"nodes[{i}] has unknown keys: {', '.join(sorted(extra))}")
        missing = {"id", "inputs", "outputs"} - set(entry)
        if missing:
            raise GraphParseError(f"nodes[{i}] missing keys: {', '.join(sorted(missing))}")
        if not isinstance(entry["id"], str):
            raise GraphParseError(f"nodes[{i}].id must be a string")
        for key in ("inputs", "outputs"):
            val = entry[key]
            if not isinstance(val, list) or not all(isinstance(s, str) for s in val):
                raise GraphParseError(f"nodes[{i}].{key} must be an array of strings")
        nodes.append(ComputeNode(entry["id"], tuple(entry["inputs"]), tuple(entry["outputs"])))
    if not isinstance(doc["target"], str):
        raise GraphParseError("'target' must be a string")
    return DataflowGraph(tuple(streams), tuple(nodes), doc["target"])


def parse_graph(text: str) -> DataflowGraph:
    """Parse and validate a graph document (JSON, see :func:`graph_from_dict`).

    Raises :class:`GraphParseError` on syntax/schema problems (with position
    for syntax errors) and :class:`GraphValidationError` when invariants fail.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise GraphParseError(
            f"graph document is not valid JSON: {err.msg} (line {err.lineno}, column {err.colno})"
        ) from err
    graph = graph_from_dict(doc)
    violations = graph.validate()
    if violations:
        raise GraphValidationError(violations)
    return graph


def serialise_graph(graph: DataflowGraph) -> str:
    """Inverse of :func:`parse_graph` for validated graphs."""
    return json.dumps(graph.to_dict(), indent=2) + "\n"


def load_graph(path: str | Path) -> DataflowGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))
