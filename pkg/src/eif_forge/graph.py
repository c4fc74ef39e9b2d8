"""Parameter graphs: a statistical functional written as a chain of primitives.

Node ``j`` computes ``h_j = theta_j(P, h_pa(j))`` with every parent id smaller
than ``j``; the last node is the scalar parameter.  Graphs are read from a
JSON document (see :func:`parse_graph`) or assembled with :class:`GraphBuilder`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .expr import Col, Expr, ExprSyntaxError, Ref, columns_of, parse_expr, refs_of, unparse

__all__ = [
    "KINDS", "Space", "SCALAR", "FN_Z", "fn_x",
    "ColumnSpec", "NodeSpec", "ParameterGraph", "Finding", "ValidationReport",
    "GraphParseError", "GraphValidationError",
    "parse_graph", "serialize", "validate", "prepare", "topo_order", "infer_spaces",
    "GraphBuilder",
]

KINDS = (
    "cond_mean", "cond_variance", "cond_covariance", "density", "pointwise",
    "scalar_fn", "constant", "lift", "fix_binary", "mean",
)
_MEAN_LIKE = ("cond_mean", "mean", "cond_variance")


class GraphParseError(ValueError):
    pass


class GraphValidationError(ValueError):
    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(str(f) for f in self.findings))


@dataclass(frozen=True)
class Space:
    """Ambient space of a node output: a real number, L2(P), or L2(P_X)."""

    kind: str  # "scalar" | "z" | "x"
    varset: frozenset = frozenset()

    def __str__(self):
        if self.kind == "scalar":
            return "Scalar"
        if self.kind == "z":
            return "FnOfZ"
        return "FnOfX(" + ",".join(sorted(self.varset)) + ")"

    @property
    def is_function(self) -> bool:
        return self.kind != "scalar"


SCALAR = Space("scalar")
FN_Z = Space("z")


def fn_x(columns: Iterable[str]) -> Space:
    cols = frozenset(columns)
    if not cols:
        return SCALAR
    return Space("x", cols)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "numeric"  # numeric | binary


@dataclass(frozen=True)
class NodeSpec:
    """One primitive and its wiring.

    ``dependents`` holds :class:`~eif_forge.expr.Col` or :class:`~eif_forge.expr.Ref`
    leaves (the function ``u`` a conditional mean/variance/covariance acts on).
    ``label`` is the user-facing id, which differs from ``id`` only for nodes
    created while expanding ``fixed`` constraints.
    """

    id: int
    kind: str
    parents: tuple = ()
    given: tuple = ()
    dependents: tuple = ()
    fixed: tuple = ()
    expr: Expr | None = None
    columns: tuple = ()
    column: str | None = None
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", str(self.id))


@dataclass(frozen=True)
class ParameterGraph:
    nodes: tuple
    output: int
    schema: tuple

    @property
    def k(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> NodeSpec:
        return self.nodes[node_id - 1]

    @property
    def column_kinds(self) -> dict:
        return {c.name: c.kind for c in self.schema}


@dataclass(frozen=True)
class Finding:
    node: int | None
    code: str
    message: str

    def __str__(self):
        where = f"node {self.node}: " if self.node is not None else ""
        return f"{where}{self.code}: {self.message}"


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)
    spaces: dict = field(default_factory=dict)
    graph: ParameterGraph | None = None  # expanded form, set when findings is empty

    @property
    def ok(self) -> bool:
        return not self.findings


# --------------------------------------------------------------------------- parsing

def _dep_leaf(text, node_id) -> Expr:
    try:
        leaf = parse_expr(str(text))
    except ExprSyntaxError as exc:
        raise GraphParseError(f"node {node_id}: bad dependent {text!r}: {exc}") from exc
    if not isinstance(leaf, (Col, Ref)):
        raise GraphParseError(f"node {node_id}: dependent must be a column or a $ref, got {text!r}")
    return leaf


def _fixed_list(raw, node_id) -> tuple:
    if raw is None:
        return ()
    if isinstance(raw, str):
        raw = [raw]
    if isinstance(raw, Mapping):
        for name, value in raw.items():
            if value != 1:
                raise GraphParseError(f"node {node_id}: fixed columns can only be set to 1, got {name}={value}")
        return tuple(raw)
    return tuple(str(c) for c in raw)


def _node_from_json(raw: Mapping) -> NodeSpec:
    if "id" not in raw or "kind" not in raw:
        raise GraphParseError(f"node entry needs 'id' and 'kind': {raw!r}")
    node_id = raw["id"]
    if not isinstance(node_id, int) or isinstance(node_id, bool):
        raise GraphParseError(f"node id must be an integer, got {node_id!r}")
    kind = raw["kind"]
    if kind not in KINDS:
        raise GraphParseError(f"node {node_id}: unknown kind {kind!r}")
    params = raw.get("params") or {}
    parents = tuple(raw.get("parents") or ())
    fields = {"id": node_id, "kind": kind}

    expr = None
    if kind in ("pointwise", "scalar_fn", "constant"):
        if "expr" not in params:
            raise GraphParseError(f"node {node_id}: {kind} needs params.expr")
        try:
            expr = parse_expr(str(params["expr"]))
        except ExprSyntaxError as exc:
            raise GraphParseError(f"node {node_id}: {exc}") from exc
        fields["expr"] = expr
        if not parents:
            parents = tuple(sorted(refs_of(expr)))

    if kind in _MEAN_LIKE:
        if "dependent" in params and params["dependent"] is not None:
            deps = (_dep_leaf(params["dependent"], node_id),)
        elif len(parents) == 1:
            deps = (Ref(parents[0]),)
        else:
            raise GraphParseError(f"node {node_id}: {kind} needs params.dependent or exactly one parent")
        fields["dependents"] = deps
        fields["given"] = tuple(params.get("given") or ())
        fields["fixed"] = _fixed_list(params.get("fixed"), node_id)
    elif kind == "cond_covariance":
        if params.get("dependents") is not None:
            deps = tuple(_dep_leaf(d, node_id) for d in params["dependents"])
        else:
            deps = tuple(Ref(p) for p in parents)
        fields["dependents"] = deps
        fields["given"] = tuple(params.get("given") or ())
    elif kind == "density":
        fields["columns"] = tuple(params.get("columns") or ())
        fields["given"] = tuple(params.get("given") or ())
    elif kind == "fix_binary":
        fields["column"] = params.get("column")

    if kind in _MEAN_LIKE + ("cond_covariance",) and not parents:
        parents = tuple(d.node for d in fields["dependents"] if isinstance(d, Ref))
    fields["parents"] = tuple(int(p) for p in parents)
    return NodeSpec(**fields)


def parse_graph(text: str) -> ParameterGraph:
    """Read a graph from its JSON interchange form.

    Raises :class:`GraphParseError` on malformed JSON (with line/column),
    unknown kinds, duplicate ids and references to later nodes.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(
            f"JSON syntax error at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}"
        ) from exc
    if not isinstance(doc, Mapping) or "nodes" not in doc:
        raise GraphParseError("graph document must be an object with 'nodes'")
    schema = tuple(
        ColumnSpec(str(c["name"]), str(c.get("kind", "numeric"))) for c in doc.get("schema", [])
    )
    nodes = [_node_from_json(raw) for raw in doc["nodes"]]
    seen = set()
    for node in nodes:
        if node.id in seen:
            raise GraphParseError(f"duplicate node id {node.id}")
        seen.add(node.id)
    nodes.sort(key=lambda n: n.id)
    for node in nodes:
        for p in node.parents:
            if p >= node.id:
                raise GraphParseError(f"node {node.id} references node {p}, which is not earlier (forward reference)")
    output = doc.get("output", nodes[-1].id if nodes else 0)
    return ParameterGraph(tuple(nodes), int(output), schema)


def _node_to_json(node: NodeSpec) -> dict:
    out = {"id": node.id, "kind": node.kind, "parents": list(node.parents)}
    params: dict = {}
    if node.expr is not None:
        params["expr"] = unparse(node.expr)
    if node.kind in _MEAN_LIKE:
        params["dependent"] = unparse(node.dependents[0]) if node.dependents else None
        params["given"] = list(node.given)
        params["fixed"] = {c: 1 for c in node.fixed} if node.fixed else None
    elif node.kind == "cond_covariance":
        params["dependents"] = [unparse(d) for d in node.dependents]
        params["given"] = list(node.given)
    elif node.kind == "density":
        params["columns"] = list(node.columns)
        params["given"] = list(node.given)
    elif node.kind == "fix_binary":
        params["column"] = node.column
    out["params"] = params
    return out


def serialize(graph: ParameterGraph, indent: int | None = None) -> str:
    doc = {
        "schema": [{"name": c.name, "kind": c.kind} for c in graph.schema],
        "nodes": [_node_to_json(n) for n in graph.nodes],
        "output": graph.output,
    }
    return json.dumps(doc, indent=indent)


# --------------------------------------------------------------------------- validation

def _referenced_columns(node: NodeSpec) -> set:
    cols = set(node.given) | set(node.fixed) | set(node.columns)
    if node.column:
        cols.add(node.column)
    if node.expr is not None:
        cols |= columns_of(node.expr)
    for d in node.dependents:
        if isinstance(d, Col):
            cols.add(d.name)
    return cols


def infer_spaces(graph: ParameterGraph) -> tuple[dict, list]:
    """Output space of every node plus the findings met while inferring them."""
    spaces: dict = {}
    findings: list = []
    kinds = graph.column_kinds

    def bad(node, code, msg):
        findings.append(Finding(node.id, code, msg))

    for node in graph.nodes:
        pspaces = [spaces.get(p) for p in node.parents]
        if any(s is None for s in pspaces):
            spaces[node.id] = None
            continue
        out = None
        k = node.kind
        for d in node.dependents:
            if isinstance(d, Ref) and d.node not in node.parents:
                bad(node, "unknown-ref", f"dependent ${d.node} is not a declared parent")
        if node.expr is not None:
            extra = refs_of(node.expr) - set(node.parents)
            if extra:
                bad(node, "unknown-ref", f"expression references undeclared parents {sorted(extra)}")

        if k in _MEAN_LIKE or k == "cond_covariance":
            want = 2 if k == "cond_covariance" else 1
            if len(node.dependents) != want:
                bad(node, "arity", f"{k} takes {want} dependent(s), got {len(node.dependents)}")
            if k == "mean" and node.given:
                bad(node, "arity", "mean takes no conditioning columns; use cond_mean")
            if len(set(node.parents)) != len(set(d.node for d in node.dependents if isinstance(d, Ref))):
                bad(node, "arity", "parents must be exactly the $ref dependents")
            for d in node.dependents:
                if isinstance(d, Ref) and d.node in node.parents:
                    s = spaces[d.node]
                    if s != FN_Z:
                        bad(node, "space-mismatch", f"dependent ${d.node} is {s}, needs FnOfZ (insert a lift)")
            for c in node.fixed:
                if c in node.given:
                    bad(node, "fixed-in-given", f"fixed column {c} must not also be in given")
            out = fn_x(node.given)
        elif k == "density":
            if not node.columns:
                bad(node, "arity", "density needs at least one target column")
            if node.parents:
                bad(node, "arity", "density takes no parents")
            out = FN_Z
        elif k == "constant":
            if node.parents:
                bad(node, "arity", "constant takes no parents")
            out = FN_Z if columns_of(node.expr) else SCALAR
        elif k == "scalar_fn":
            if not node.parents:
                bad(node, "arity", "scalar_fn needs at least one parent")
            for p, s in zip(node.parents, pspaces):
                if s != SCALAR:
                    bad(node, "space-mismatch", f"scalar_fn parent {p} is {s}, needs Scalar")
            if columns_of(node.expr):
                bad(node, "space-mismatch", "scalar_fn expression cannot reference data columns")
            out = SCALAR
        elif k == "pointwise":
            if not node.parents:
                bad(node, "arity", "pointwise needs at least one parent")
            distinct = set(pspaces)
            if any(s == SCALAR for s in pspaces):
                bad(node, "space-mismatch", "pointwise parents must be functions, not Scalar")
                out = FN_Z
            elif distinct == {FN_Z} or not distinct:
                out = FN_Z
            elif len(distinct) == 1:
                (s,) = distinct
                if columns_of(node.expr) <= s.varset:
                    out = s
                else:
                    bad(node, "space-mismatch",
                        f"expression reads columns outside {s}; lift the parents to FnOfZ first")
                    out = FN_Z
            else:
                bad(node, "space-mismatch", f"pointwise parents live in different spaces {sorted(map(str, distinct))}")
                out = FN_Z
        elif k == "lift":
            if len(node.parents) != 1:
                bad(node, "arity", "lift takes exactly one parent")
            elif pspaces[0].kind != "x":
                bad(node, "space-mismatch", f"lift parent is {pspaces[0]}, needs FnOfX")
            out = FN_Z
        elif k == "fix_binary":
            if len(node.parents) != 1:
                bad(node, "arity", "fix_binary takes exactly one parent")
                out = SCALAR
            else:
                s = pspaces[0]
                if s.kind != "x" or node.column not in s.varset:
                    bad(node, "space-mismatch", f"fix_binary parent is {s}, needs FnOfX containing {node.column}")
                    out = SCALAR
                else:
                    out = fn_x(s.varset - {node.column})
            if node.column is None:
                bad(node, "arity", "fix_binary needs params.column")
        for c in list(node.fixed) + ([node.column] if k == "fix_binary" and node.column else []):
            if c in kinds and kinds[c] != "binary":
                bad(node, "non-binary-fixed", f"column {c} is {kinds[c]}, fixed/fix_binary needs binary")
        spaces[node.id] = out
    return spaces, findings


def validate(graph: ParameterGraph) -> ValidationReport:
    """Collect every structural and typing problem; never raises.

    On success ``report.graph`` holds the expanded graph in which each
    ``fixed`` constraint is split into a conditional mean over the larger
    covariate set followed by a ``fix_binary`` node.
    """
    findings: list = []
    columns = {c.name for c in graph.schema}
    names = [c.name for c in graph.schema]
    if len(set(names)) != len(names):
        findings.append(Finding(None, "schema", "duplicate column names"))
    for c in graph.schema:
        if c.kind not in ("numeric", "binary"):
            findings.append(Finding(None, "schema", f"column {c.name} has unknown kind {c.kind!r}"))
    if not graph.nodes:
        findings.append(Finding(None, "empty", "graph has no nodes"))
        return ValidationReport(findings)
    for pos, node in enumerate(graph.nodes, start=1):
        if node.id != pos:
            findings.append(Finding(node.id, "id-order", f"expected id {pos} at position {pos}"))
        if node.kind not in KINDS:
            findings.append(Finding(node.id, "unknown-kind", node.kind))
        for p in node.parents:
            if p >= node.id or p < 1:
                findings.append(Finding(node.id, "forward-reference", f"parent {p} is not an earlier node"))
        missing = sorted(_referenced_columns(node) - columns)
        if missing:
            findings.append(Finding(node.id, "missing-column", f"columns {missing} are not in the schema"))
    if graph.output != len(graph.nodes):
        findings.append(Finding(None, "output-id", f"output must be the last node ({len(graph.nodes)}), got {graph.output}"))
    if findings:
        return ValidationReport(findings)
    spaces, space_findings = infer_spaces(graph)
    findings.extend(space_findings)
    if spaces.get(graph.output) != SCALAR:
        findings.append(Finding(graph.output, "output-not-scalar", f"output space is {spaces.get(graph.output)}"))
    report = ValidationReport(findings, spaces)
    if report.ok:
        report.graph = _expand_fixed(graph)
        report.spaces, _ = infer_spaces(report.graph)
    return report


def _expand_fixed(graph: ParameterGraph) -> ParameterGraph:
    if not any(n.fixed for n in graph.nodes):
        return graph
    new_id: dict = {}
    out: list = []

    def remap(leaf):
        return Ref(new_id[leaf.node]) if isinstance(leaf, Ref) else leaf

    for node in graph.nodes:
        parents = tuple(new_id[p] for p in node.parents)
        deps = tuple(remap(d) for d in node.dependents)
        expr = node.expr
        if expr is not None and refs_of(expr):
            expr = _rename_refs(expr, new_id)
        base_id = len(out) + 1
        base = replace(node, id=base_id, parents=parents, dependents=deps, expr=expr,
                       given=tuple(node.fixed) + tuple(node.given), fixed=(), label=node.label)
        if node.fixed and base.kind == "mean":
            base = replace(base, kind="cond_mean")
        out.append(base)
        last = base_id
        for c in node.fixed:
            fid = len(out) + 1
            out.append(NodeSpec(fid, "fix_binary", parents=(last,), column=c, label=f"{node.label}[{c}=1]"))
            last = fid
        new_id[node.id] = last
    return ParameterGraph(tuple(out), new_id[graph.output], graph.schema)


def _rename_refs(expr, mapping):
    from .expr import BinOp, Call, Neg

    if isinstance(expr, Ref):
        return Ref(mapping[expr.node])
    if isinstance(expr, Neg):
        return Neg(_rename_refs(expr.operand, mapping))
    if isinstance(expr, Call):
        return Call(expr.func, _rename_refs(expr.arg, mapping))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, _rename_refs(expr.left, mapping), _rename_refs(expr.right, mapping))
    return expr


def prepare(graph: ParameterGraph) -> tuple[ParameterGraph, dict]:
    """Validate, expand, and return ``(graph, spaces)``; raise on any finding."""
    report = validate(graph)
    if not report.ok:
        raise GraphValidationError(report.findings)
    return report.graph, report.spaces


def topo_order(graph: ParameterGraph) -> list[int]:
    order = []
    for pos, node in enumerate(graph.nodes, start=1):
        if node.id != pos or any(p >= node.id for p in node.parents):
            raise GraphValidationError([Finding(node.id, "forward-reference", "graph is not in topological order")])
        order.append(node.id)
    return order


# --------------------------------------------------------------------------- builder

class GraphBuilder:
    """Incremental construction mirroring how a parameter is written by hand.

    Each method appends a node and returns its id, which later nodes use
    either directly or as ``$id`` inside expressions::

        b = GraphBuilder({"X1": "numeric", "Y": "numeric"})
        mu = b.cond_mean("Y", given=["X1"])
        psi = b.mean(b.pointwise(f"(Y - ${b.lift(mu)})^2"))
    """

    def __init__(self, schema: Mapping[str, str] | Sequence[ColumnSpec]):
        if isinstance(schema, Mapping):
            self.schema = tuple(ColumnSpec(n, k) for n, k in schema.items())
        else:
            self.schema = tuple(schema)
        self.nodes: list[NodeSpec] = []

    def _add(self, **fields) -> int:
        node_id = len(self.nodes) + 1
        self.nodes.append(NodeSpec(id=node_id, **fields))
        return node_id

    @staticmethod
    def _leaf(dep) -> Expr:
        if isinstance(dep, int):
            return Ref(dep)
        if isinstance(dep, (Col, Ref)):
            return dep
        return _dep_leaf(dep, "?")

    def constant(self, expr: str) -> int:
        return self._add(kind="constant", expr=parse_expr(expr))

    def cond_mean(self, dependent, given=(), fixed=()) -> int:
        leaf = self._leaf(dependent)
        parents = (leaf.node,) if isinstance(leaf, Ref) else ()
        return self._add(kind="cond_mean", parents=parents, dependents=(leaf,),
                         given=tuple(given), fixed=tuple(fixed))

    def mean(self, dependent) -> int:
        leaf = self._leaf(dependent)
        parents = (leaf.node,) if isinstance(leaf, Ref) else ()
        return self._add(kind="mean", parents=parents, dependents=(leaf,))

    def variance(self, dependent, given=()) -> int:
        leaf = self._leaf(dependent)
        parents = (leaf.node,) if isinstance(leaf, Ref) else ()
        return self._add(kind="cond_variance", parents=parents, dependents=(leaf,), given=tuple(given))

    def covariance(self, first, second, given=()) -> int:
        leaves = (self._leaf(first), self._leaf(second))
        parents = tuple(dict.fromkeys(l.node for l in leaves if isinstance(l, Ref)))
        return self._add(kind="cond_covariance", parents=parents, dependents=leaves, given=tuple(given))

    def density(self, columns, given=()) -> int:
        if isinstance(columns, str):
            columns = [columns]
        return self._add(kind="density", columns=tuple(columns), given=tuple(given))

    def pointwise(self, expr: str) -> int:
        tree = parse_expr(expr)
        return self._add(kind="pointwise", parents=tuple(sorted(refs_of(tree))), expr=tree)

    def scalar_fn(self, expr: str) -> int:
        tree = parse_expr(expr)
        return self._add(kind="scalar_fn", parents=tuple(sorted(refs_of(tree))), expr=tree)

    def lift(self, parent: int) -> int:
        return self._add(kind="lift", parents=(parent,))

    def fix_binary(self, parent: int, column: str) -> int:
        return self._add(kind="fix_binary", parents=(parent,), column=column)

    def build(self, output: int | None = None) -> ParameterGraph:
        output = len(self.nodes) if output is None else output
        return ParameterGraph(tuple(self.nodes), output, self.schema)
