"""The tree of placed columns and terminal streams, with JSON and DOT exports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .column import ColumnSpec
from .thermo import ATM, Stream

# leaf labels
PRODUCT = "product"
OUTLET = "outlet"
NEGLIGIBLE = "negligible"
OPEN = "open"
COLUMN = "column"
LABELS = (PRODUCT, OUTLET, NEGLIGIBLE, OPEN, COLUMN)

FORMAT_VERSION = 1


class FlowsheetError(ValueError):
    pass


@dataclass
class Node:
    id: int
    stream: Stream
    label: str = OPEN
    reward: float = 0.0
    revenue: float = 0.0  # $/yr earned by this stream as a product
    spec: ColumnSpec | None = None
    summary: dict = field(default_factory=dict)
    failure: str = ""
    tops: "Node | None" = None
    bottoms: "Node | None" = None

    @property
    def is_column(self) -> bool:
        return self.label == COLUMN

    def walk(self) -> Iterator["Node"]:
        """Pre-order traversal (node, tops subtree, bottoms subtree)."""
        yield self
        if self.tops is not None:
            yield from self.tops.walk()
        if self.bottoms is not None:
            yield from self.bottoms.walk()

    def subtree_value(self, gamma: float = 1.0) -> float:
        """Reward of this node plus discounted values of both branches."""
        value = self.reward
        for child in (self.tops, self.bottoms):
            if child is not None:
                value += gamma * child.subtree_value(gamma)
        return value

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "label": self.label,
            "stream": self.stream.to_dict(),
            "reward": float(self.reward),
            "revenue": float(self.revenue),
        }
        if self.failure:
            out["failure"] = self.failure
        if self.spec is not None:
            out["spec"] = self.spec.to_dict()
            out["summary"] = {k: float(v) for k, v in self.summary.items()}
            out["tops"] = self.tops.to_dict()
            out["bottoms"] = self.bottoms.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Node":
        if data["label"] not in LABELS:
            raise FlowsheetError(f"unknown node label {data['label']!r}")
        node = cls(
            id=int(data["id"]),
            stream=Stream.from_dict(data["stream"]),
            label=data["label"],
            reward=float(data["reward"]),
            revenue=float(data.get("revenue", 0.0)),
            failure=data.get("failure", ""),
        )
        if node.label == COLUMN:
            try:
                s = data["spec"]
                node.spec = ColumnSpec(float(s["pressure"]), int(s["n_stages"]), float(s["reflux_ratio"]), float(s["boilup_ratio"]))
                node.summary = {k: float(v) for k, v in data.get("summary", {}).items()}
                node.tops = cls.from_dict(data["tops"])
                node.bottoms = cls.from_dict(data["bottoms"])
            except KeyError as exc:
                raise FlowsheetError(f"column node {node.id} missing {exc}") from None
        return node


@dataclass
class Flowsheet:
    component_names: tuple
    root: Node
    purity_spec: float = 0.95
    finished: bool = False

    @property
    def feed(self) -> Stream:
        return self.root.stream

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    def columns(self) -> list[Node]:
        return sorted((n for n in self.root.walk() if n.is_column), key=lambda n: n.summary.get("column_index", 0))

    def leaves(self) -> list[Node]:
        return [n for n in self.root.walk() if not n.is_column]

    @property
    def episode_return(self) -> float:
        return float(sum(n.reward for n in self.root.walk()))

    @property
    def total_revenue(self) -> float:
        return float(sum(n.revenue for n in self.root.walk()))

    @property
    def total_tac(self) -> float:
        return float(sum(n.summary.get("tac", 0.0) for n in self.root.walk() if n.is_column))

    def recoveries(self) -> np.ndarray:
        """Per component: flow recovered in product streams where it is the majority component."""
        feed = self.feed.flows
        recovered = np.zeros_like(feed)
        for leaf in self.leaves():
            if leaf.label == PRODUCT:
                i = int(np.argmax(leaf.stream.flows))
                recovered[i] += leaf.stream.flows[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(feed > 0, recovered / feed, 0.0)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "components": list(self.component_names),
            "purity_spec": float(self.purity_spec),
            "finished": self.finished,
            "episode_return": self.episode_return,
            "total_revenue": self.total_revenue,
            "total_tac": self.total_tac,
            "tree": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Flowsheet":
        if data.get("format_version") != FORMAT_VERSION:
            raise FlowsheetError(f"unsupported flowsheet format {data.get('format_version')!r}")
        try:
            return cls(
                component_names=tuple(data["components"]),
                root=Node.from_dict(data["tree"]),
                purity_spec=float(data["purity_spec"]),
                finished=bool(data["finished"]),
            )
        except (KeyError, TypeError) as exc:
            raise FlowsheetError(f"malformed flowsheet: {exc}") from None


def _leaf_label(node: Node, names) -> str:
    s = node.stream
    if s.total > 0:
        i = int(np.argmax(s.flows))
        purity = s.flows[i] / s.total
        return f"{node.label}: {names[i]}\\n{100 * purity:.1f}% | {s.total:.4g} mol/s"
    return f"{node.label}\\n0 mol/s"


def to_dot(flowsheet: Flowsheet) -> str:
    names = flowsheet.component_names
    lines = [
        "digraph flowsheet {",
        "  rankdir=LR;",
        '  node [fontname="Helvetica"];',
        '  feed [shape=plaintext, label="Feed\\n%.4g mol/s"];' % flowsheet.feed.total,
    ]
    edges = [f"  feed -> n{flowsheet.root.id};"]
    for node in flowsheet.root.walk():
        if node.is_column:
            s = node.spec
            k = int(node.summary.get("column_index", 0))
            label = f"COL {k} | {s.pressure / ATM:.2f} atm | N={s.n_stages} | R={s.reflux_ratio:.3g} | s={s.boilup_ratio:.3g}"
            lines.append(f'  n{node.id} [shape=box, label="{label}"];')
            edges.append(f'  n{node.id} -> n{node.tops.id} [label="tops"];')
            edges.append(f'  n{node.id} -> n{node.bottoms.id} [label="bottoms"];')
        else:
            shape = "doubleoctagon" if node.label == PRODUCT else "ellipse"
            lines.append(f'  n{node.id} [shape={shape}, label="{_leaf_label(node, names)}"];')
    return "\n".join(lines + edges + ["}"]) + "\n"


def export_flowsheet(flowsheet: Flowsheet, fmt: str = "json") -> str:
    if not flowsheet.finished:
        raise FlowsheetError("flowsheet export requires a finished episode")
    if fmt == "json":
        return json.dumps(flowsheet.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "dot":
        return to_dot(flowsheet)
    raise ValueError(f"unknown export format {fmt!r}")


def parse_flowsheet(text: str) -> Flowsheet:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FlowsheetError(f"not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise FlowsheetError("flowsheet JSON must be an object")
    return Flowsheet.from_dict(data)
