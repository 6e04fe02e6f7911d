"""Network model: case parsing, admittance matrix and per-bus local data.

All electrical quantities stored on a :class:`Network` are in per unit on
``base_mva``. Generator cost coefficients stay in $/h with power in MW; the
conversion happens when the objective is evaluated.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np


class CaseParseError(ValueError):
    """Raised when a case file cannot be turned into a :class:`Network`."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class UnsupportedFieldError(CaseParseError):
    def __init__(self, field_name: str, detail: str = "", line: Optional[int] = None):
        self.field = field_name
        msg = f"unsupported field {field_name!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg, line)


class DisconnectedNetworkError(CaseParseError):
    pass


@dataclass(frozen=True)
class CostPoly:
    """Quadratic generation cost c2*P^2 + c1*P + c0 with P in MW, result in $/h."""

    c2: float
    c1: float
    c0: float

    def __call__(self, p_mw):
        return self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0


@dataclass(frozen=True)
class Bus:
    id: int
    pd: float
    qd: float
    pg_min: float = 0.0
    pg_max: float = 0.0
    qg_min: float = 0.0
    qg_max: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1
    shunt: complex = 0j
    cost: Optional[CostPoly] = None
    label: Optional[int] = None

    @property
    def is_generator(self) -> bool:
        return self.cost is not None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    y: complex
    i_max: Optional[float] = None
    s_max: Optional[float] = None
    p_max: Optional[float] = None
    rate: Optional[float] = None  # thermal rating in p.u., source for the limit overrides


@dataclass(frozen=True)
class Network:
    buses: tuple
    lines: tuple
    base_mva: float = 100.0
    name: str = "network"

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def generators(self) -> list:
        return [b.id for b in self.buses if b.is_generator]

    def neighbors(self, k: int) -> list:
        out = set()
        for ln in self.lines:
            if ln.from_bus == k:
                out.add(ln.to_bus)
            elif ln.to_bus == k:
                out.add(ln.from_bus)
        return sorted(out)


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


@dataclass(frozen=True)
class LocalProblem:
    """Everything bus ``k`` needs to build and solve its own subproblem.

    ``neighbors`` lists the bus itself first and then its neighbours in
    ascending id order; ``e_map`` is the same list used as an index array,
    so ``v_re[e_map]`` realises ``E_k v_re``.
    """

    k: int
    neighbors: tuple
    e_map: np.ndarray
    g: np.ndarray
    b: np.ndarray
    C: np.ndarray
    D: np.ndarray
    line_g: np.ndarray
    line_b: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    i_max: np.ndarray  # nan where absent
    s_max: np.ndarray
    p_max: np.ndarray
    pd: float
    qd: float
    pg_min: float
    pg_max: float
    qg_min: float
    qg_max: float
    cost: Optional[CostPoly]
    base_mva: float

    @property
    def size(self) -> int:
        return len(self.neighbors)

    @property
    def n_lines(self) -> int:
        return len(self.neighbors) - 1


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


# --------------------------------------------------------------------------
# MATPOWER parsing

_IGNORED_FIELDS = {"version", "bus_name", "areas", "gentype", "genfuel", "bus_types", "dcline", "if"}
_TOKEN = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<nl>\n)
      | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:Inf|inf|NaN|nan))
      | (?P<str>'[^'\n]*')
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_][A-Za-z_0-9]*)*)
      | (?P<sym>[=\[\]{};,()])
      | (?P<dots>\.\.\.[^\n]*)
    """,
    re.VERBOSE,
)


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == "'":
            in_str = not in_str
        elif ch == "%" and not in_str:
            return line[:i]
    return line


def _tokenize(text: str) -> list:
    toks = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = _strip_comment(raw)
        pos = 0
        while pos < len(line):
            m = _TOKEN.match(line, pos)
            if m is None:
                raise CaseParseError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
            kind = m.lastgroup
            if kind not in ("ws", "dots"):
                toks.append((kind, m.group(), lineno, pos + 1))
            pos = m.end()
        toks.append(("nl", "\n", lineno, len(line) + 1))
    return toks


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    def peek(self, skip_nl=True):
        j = self.i
        while skip_nl and j < len(self.toks) and self.toks[j][0] == "nl":
            j += 1
        return self.toks[j] if j < len(self.toks) else None

    def next(self, skip_nl=True):
        while skip_nl and self.i < len(self.toks) and self.toks[self.i][0] == "nl":
            self.i += 1
        if self.i >= len(self.toks):
            last = self.toks[-1] if self.toks else ("nl", "", 1, 1)
            raise CaseParseError("unexpected end of input", last[2], last[3])
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise CaseParseError(f"expected {value!r}, found {tok[1]!r}", tok[2], tok[3])
        return tok

    def value(self):
        tok = self.next()
        if tok[0] == "num":
            return float(tok[1]), tok
        if tok[0] == "str":
            return tok[1][1:-1], tok
        if tok[1] == "[":
            return self.matrix("]"), tok
        if tok[1] == "{":
            return self.matrix("}"), tok
        raise CaseParseError(f"unexpected token {tok[1]!r}", tok[2], tok[3])

    def matrix(self, close):
        rows, row = [], []
        while True:
            tok = self.next(skip_nl=False)
            kind, text = tok[0], tok[1]
            if text == close:
                if row:
                    rows.append(row)
                return rows
            if kind == "nl" or text == ";":
                if row:
                    rows.append(row)
                    row = []
            elif text == ",":
                continue
            elif kind == "num":
                row.append(float(text))
            elif kind == "str":
                row.append(text[1:-1])
            else:
                raise CaseParseError(f"unexpected token {text!r} in matrix", tok[2], tok[3])


def _parse_matpower_fields(text: str) -> dict:
    toks = _tokenize(text)
    if not any(t[0] != "nl" for t in toks):
        raise CaseParseError("empty case file", 1, 1)
    p = _Parser(toks)
    fields = {}
    first = p.peek()
    if first is not None and first[1] == "function":
        p.next()
        out = p.next()
        if out[0] != "ident":
            raise CaseParseError("malformed function header", out[2], out[3])
        p.expect("=")
        fname = p.next()
        if fname[0] != "ident":
            raise CaseParseError("malformed function header", fname[2], fname[3])
        fields["__name__"] = (fname[1], fname[2])
        prefix = out[1] + "."
    else:
        prefix = "mpc."
    while p.peek() is not None:
        tok = p.next()
        if tok[1] == ";":
            continue
        if tok[0] != "ident" or not tok[1].startswith(prefix):
            raise CaseParseError(f"expected assignment to {prefix}<field>, found {tok[1]!r}", tok[2], tok[3])
        name = tok[1][len(prefix):]
        p.expect("=")
        val, vtok = p.value()
        fields[name] = (val, tok[2])
        nxt = p.peek(skip_nl=False)
        if nxt is not None and nxt[1] == ";":
            p.next(skip_nl=False)
    return fields


def _as_table(fields, name, min_cols):
    if name not in fields:
        raise CaseParseError(f"missing required field mpc.{name}")
    rows, line = fields[name]
    if not isinstance(rows, list) or not rows:
        raise CaseParseError(f"mpc.{name} must be a non-empty numeric matrix", line)
    width = len(rows[0])
    for r in rows:
        if len(r) != width or any(not isinstance(x, float) for x in r):
            raise CaseParseError(f"mpc.{name} has ragged or non-numeric rows", line)
    if width < min_cols:
        raise CaseParseError(f"mpc.{name} needs at least {min_cols} columns, has {width}", line)
    return np.array(rows, dtype=float), line


def _fin(x: float) -> float:
    return x if math.isfinite(x) else (math.inf if x > 0 else -math.inf)


def parse_matpower(text: str, taps: str = "error") -> Network:
    """Parse the subset of the MATPOWER case format used by the OPF model.

    ``taps="ignore"`` treats off-nominal transformer ratios as 1 instead of
    raising; phase shifters are always rejected.
    """
    fields = _parse_matpower_fields(text)
    for name, (_, line) in fields.items():
        if name.startswith("__"):
            continue
        if name not in {"baseMVA", "bus", "gen", "branch", "gencost"} and name not in _IGNORED_FIELDS:
            raise UnsupportedFieldError(f"mpc.{name}", line=line)
    if "baseMVA" not in fields:
        raise CaseParseError("missing required field mpc.baseMVA")
    base, bline = fields["baseMVA"]
    if not isinstance(base, float) or base <= 0:
        raise CaseParseError("mpc.baseMVA must be a positive number", bline)
    bus, _ = _as_table(fields, "bus", 13)
    gen, gline = _as_table(fields, "gen", 10)
    branch, brline = _as_table(fields, "branch", 11)
    if "gencost" in fields:
        gencost, gcline = _as_table(fields, "gencost", 4)
    else:
        raise CaseParseError("missing required field mpc.gencost")

    labels = [int(x) for x in bus[:, 0]]
    if len(set(labels)) != len(labels):
        raise CaseParseError("duplicate bus numbers in mpc.bus")
    index = {lab: i for i, lab in enumerate(labels)}
    n = len(labels)
    shunt = (bus[:, 4] + 1j * bus[:, 5]) / base

    lines = []
    for r, row in enumerate(branch):
        if row[10] == 0:
            continue
        f, t = int(row[0]), int(row[1])
        if f not in index or t not in index:
            raise CaseParseError(f"branch {r + 1} references unknown bus", brline)
        ratio, angle = row[8], row[9]
        if angle != 0:
            raise UnsupportedFieldError("mpc.branch(:, SHIFT)", f"phase shifter on branch {r + 1}", brline)
        if ratio not in (0.0, 1.0) and taps != "ignore":
            raise UnsupportedFieldError("mpc.branch(:, TAP)", f"transformer ratio {ratio} on branch {r + 1}", brline)
        z = complex(row[2], row[3])
        if z == 0:
            raise CaseParseError(f"branch {r + 1} has zero impedance", brline)
        fi, ti = index[f], index[t]
        charging = row[4]
        shunt[fi] += 0.5j * charging
        shunt[ti] += 0.5j * charging
        rate = row[5] / base if row[5] > 0 else None
        lines.append(Line(fi, ti, 1.0 / z, s_max=rate, rate=rate))

    if gencost.shape[0] < gen.shape[0]:
        raise CaseParseError("mpc.gencost has fewer rows than mpc.gen", gcline)
    agg = {}
    for g, row in enumerate(gen):
        if row[7] <= 0:
            continue
        lab = int(row[0])
        if lab not in index:
            raise CaseParseError(f"generator {g + 1} at unknown bus {lab}", gline)
        crow = gencost[g]
        if int(crow[0]) != 2:
            raise UnsupportedFieldError("mpc.gencost(:, MODEL)", f"cost model {int(crow[0])} on generator {g + 1}", gcline)
        ncoef = int(crow[3])
        if ncoef > 3:
            raise UnsupportedFieldError("mpc.gencost(:, NCOST)", f"polynomial degree {ncoef - 1} > 2 on generator {g + 1}", gcline)
        coefs = list(crow[4:4 + ncoef])
        coefs = [0.0] * (3 - ncoef) + coefs
        k = index[lab]
        cur = agg.get(k, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        cur = [cur[0] + row[9], cur[1] + row[8], cur[2] + row[4], cur[3] + row[3],
               cur[4] + coefs[0], cur[5] + coefs[1], cur[6] + coefs[2]]
        agg[k] = cur

    buses = []
    for i in range(n):
        row = bus[i]
        kw = dict(id=i, pd=row[2] / base, qd=row[3] / base, v_min=row[12], v_max=row[11],
                  shunt=complex(shunt[i]), label=labels[i])
        if i in agg:
            pmin, pmax, qmin, qmax, c2, c1, c0 = agg[i]
            kw.update(pg_min=_fin(pmin) / base, pg_max=_fin(pmax) / base,
                      qg_min=_fin(qmin) / base, qg_max=_fin(qmax) / base, cost=CostPoly(c2, c1, c0))
        buses.append(Bus(**kw))
    name = fields.get("__name__", ("network", 0))[0]
    net = Network(tuple(buses), tuple(lines), float(base), name)
    _check_connected(net)
    return net


def _check_connected(net: Network) -> None:
    n = net.n_bus
    if n == 0:
        raise CaseParseError("network has no buses")
    adj = [[] for _ in range(n)]
    for ln in net.lines:
        if 0 <= ln.from_bus < n and 0 <= ln.to_bus < n:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise DisconnectedNetworkError(f"network is disconnected; unreachable buses {missing[:10]}")


# --------------------------------------------------------------------------
# canonical JSON

_JSON_TAG = "dopf-network"


def _opt(x):
    return None if x is None else float(x)


def to_json(net: Network, indent: Optional[int] = 1) -> str:
    buses = []
    for b in net.buses:
        buses.append({
            "id": b.id, "label": b.label, "pd": b.pd, "qd": b.qd,
            "pg_min": b.pg_min, "pg_max": b.pg_max, "qg_min": b.qg_min, "qg_max": b.qg_max,
            "v_min": b.v_min, "v_max": b.v_max, "shunt": [b.shunt.real, b.shunt.imag],
            "cost": None if b.cost is None else [b.cost.c2, b.cost.c1, b.cost.c0],
        })
    lines = [{"from": ln.from_bus, "to": ln.to_bus, "y": [ln.y.real, ln.y.imag],
              "i_max": ln.i_max, "s_max": ln.s_max, "p_max": ln.p_max, "rate": ln.rate}
             for ln in net.lines]
    doc = {"format": _JSON_TAG, "version": 1, "name": net.name, "base_mva": net.base_mva,
           "buses": buses, "lines": lines}
    return json.dumps(doc, indent=indent, allow_nan=True)


_BUS_KEYS = {"id", "label", "pd", "qd", "pg_min", "pg_max", "qg_min", "qg_max", "v_min", "v_max", "shunt", "cost"}
_LINE_KEYS = {"from", "to", "y", "i_max", "s_max", "p_max", "rate"}
_TOP_KEYS = {"format", "version", "name", "base_mva", "buses", "lines"}


def parse_json(text: str) -> Network:
    if not text.strip():
        raise CaseParseError("empty case file", 1, 1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict) or doc.get("format") != _JSON_TAG:
        raise CaseParseError(f"not a {_JSON_TAG} document")
    for key in doc:
        if key not in _TOP_KEYS:
            raise UnsupportedFieldError(key)
    try:
        buses = []
        for i, bd in enumerate(doc["buses"]):
            for key in bd:
                if key not in _BUS_KEYS:
                    raise UnsupportedFieldError(f"buses[{i}].{key}")
            cost = bd.get("cost")
            buses.append(Bus(
                id=int(bd["id"]), pd=float(bd["pd"]), qd=float(bd["qd"]),
                pg_min=float(bd.get("pg_min", 0.0)), pg_max=float(bd.get("pg_max", 0.0)),
                qg_min=float(bd.get("qg_min", 0.0)), qg_max=float(bd.get("qg_max", 0.0)),
                v_min=float(bd["v_min"]), v_max=float(bd["v_max"]),
                shunt=complex(*bd.get("shunt", [0.0, 0.0])),
                cost=None if cost is None else CostPoly(*map(float, cost)),
                label=bd.get("label"),
            ))
        lines = []
        for i, ld in enumerate(doc["lines"]):
            for key in ld:
                if key not in _LINE_KEYS:
                    raise UnsupportedFieldError(f"lines[{i}].{key}")
            lines.append(Line(int(ld["from"]), int(ld["to"]), complex(*ld["y"]),
                              _opt(ld.get("i_max")), _opt(ld.get("s_max")), _opt(ld.get("p_max")),
                              _opt(ld.get("rate"))))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CaseParseError):
            raise
        raise CaseParseError(f"malformed network document: {exc!r}") from None
    ids = [b.id for b in buses]
    if ids != list(range(len(buses))):
        raise CaseParseError("bus ids must be dense 0..N-1 in order")
    net = Network(tuple(buses), tuple(lines), float(doc.get("base_mva", 100.0)), str(doc.get("name", "network")))
    _check_connected(net)
    return net


def parse_case(text: str, format: str = "matpower-m", taps: str = "error") -> Network:
    """Parse case text in ``"matpower-m"`` or ``"canonical-json"`` format."""
    if format == "matpower-m":
        return parse_matpower(text, taps=taps)
    if format == "canonical-json":
        return parse_json(text)
    raise ValueError(f"unknown case format {format!r}")


def load_case(path, format: Optional[str] = None, taps: str = "error") -> Network:
    path = str(path)
    if format is None:
        format = "canonical-json" if path.endswith(".json") else "matpower-m"
    with open(path) as fh:
        return parse_case(fh.read(), format, taps=taps)


# --------------------------------------------------------------------------
# overrides

def apply_overrides(net: Network, scale_pd: float = 1.0, scale_qd: float = 1.0,
                    qg_min_mvar: Optional[float] = None, line_limit: Optional[str] = None) -> Network:
    """Return a modified copy with demand scaling, a reactive lower bound on
    every generator and a single kind of line limit.

    ``line_limit`` is one of ``None`` (keep as parsed), ``"none"``,
    ``"imax"``, ``"smax"`` or ``"pmax"``; the selected limit takes the line
    rating as its value.
    """
    buses = []
    for b in net.buses:
        kw = dict(pd=b.pd * scale_pd, qd=b.qd * scale_qd)
        if qg_min_mvar is not None and b.is_generator:
            kw["qg_min"] = qg_min_mvar / net.base_mva
        buses.append(replace(b, **kw))
    lines = list(net.lines)
    if line_limit is not None:
        if line_limit not in ("none", "imax", "smax", "pmax"):
            raise ValueError(f"unknown line limit kind {line_limit!r}")
        lines = []
        for ln in net.lines:
            lim = {"i_max": None, "s_max": None, "p_max": None}
            if line_limit != "none" and ln.rate is not None:
                lim[line_limit[0] + "_max"] = ln.rate
            lines.append(replace(ln, **lim))
    return Network(tuple(buses), tuple(lines), net.base_mva, net.name)


# --------------------------------------------------------------------------
# derived quantities

def build_admittance(net: Network) -> AdmittanceMatrix:
    n = net.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for b in net.buses:
        Y[b.id, b.id] += b.shunt
    for ln in net.lines:
        f, t = ln.from_bus, ln.to_bus
        Y[f, f] += ln.y
        Y[t, t] += ln.y
        Y[f, t] -= ln.y
        Y[t, f] -= ln.y
    return AdmittanceMatrix(Y.real.copy(), Y.imag.copy())


def _line_limits(net: Network, k: int, nbrs: Sequence[int]):
    m = len(nbrs)
    out = {key: np.full(m, np.nan) for key in ("i_max", "s_max", "p_max")}
    pos = {l: r for r, l in enumerate(nbrs)}
    for ln in net.lines:
        if k not in (ln.from_bus, ln.to_bus):
            continue
        other = ln.to_bus if ln.from_bus == k else ln.from_bus
        r = pos[other]
        for key in out:
            val = getattr(ln, key)
            # parallel lines: ratings add, an unlimited circuit removes the limit
            out[key][r] = np.nansum([out[key][r], val]) if val is not None else np.inf
    for key in out:
        out[key][np.isinf(out[key])] = np.nan
    return out


def local_problem(net: Network, y: AdmittanceMatrix, k: int) -> LocalProblem:
    if not 0 <= k < net.n_bus:
        raise IndexError(f"bus {k} out of range")
    nbrs = net.neighbors(k)
    order = [k] + nbrs
    idx = np.array(order, dtype=int)
    n = len(order)
    g = y.G[idx, k].copy()
    b = y.B[idx, k].copy()
    line_g = -y.G[k, nbrs] if nbrs else np.zeros(0)
    line_b = -y.B[k, nbrs] if nbrs else np.zeros(0)
    C = np.zeros((n - 1, n))
    D = np.zeros((n - 1, n))
    for r in range(n - 1):
        C[r, 0], C[r, r + 1] = line_g[r], -line_g[r]
        D[r, 0], D[r, r + 1] = line_b[r], -line_b[r]
    lim = _line_limits(net, k, nbrs)
    bus = net.buses[k]
    return LocalProblem(
        k=k, neighbors=tuple(order), e_map=idx, g=g, b=b, C=C, D=D,
        line_g=np.asarray(line_g, float), line_b=np.asarray(line_b, float),
        v_min=np.array([net.buses[i].v_min for i in order]),
        v_max=np.array([net.buses[i].v_max for i in order]),
        i_max=lim["i_max"], s_max=lim["s_max"], p_max=lim["p_max"],
        pd=bus.pd, qd=bus.qd, pg_min=bus.pg_min, pg_max=bus.pg_max,
        qg_min=bus.qg_min, qg_max=bus.qg_max, cost=bus.cost, base_mva=net.base_mva,
    )


def local_problems(net: Network, y: Optional[AdmittanceMatrix] = None) -> list:
    y = build_admittance(net) if y is None else y
    return [local_problem(net, y, k) for k in range(net.n_bus)]


def validate(net: Network) -> list:
    out = []
    n = net.n_bus
    for i, b in enumerate(net.buses):
        where = f"bus {b.id}" + (f" (label {b.label})" if b.label is not None else "")
        if b.id != i:
            out.append(Violation("bus_id", where, f"id {b.id} at position {i}; ids must be dense 0..N-1"))
        if b.pg_min > b.pg_max:
            out.append(Violation("pg_bounds", where, f"pg_min {b.pg_min} > pg_max {b.pg_max}"))
        if b.qg_min > b.qg_max:
            out.append(Violation("qg_bounds", where, f"qg_min {b.qg_min} > qg_max {b.qg_max}"))
        if not 0 < b.v_min <= b.v_max:
            out.append(Violation("v_bounds", where, f"voltage bounds must satisfy 0 < v_min <= v_max, got [{b.v_min}, {b.v_max}]"))
        if not b.is_generator and any(x != 0 for x in (b.pg_min, b.pg_max, b.qg_min, b.qg_max)):
            out.append(Violation("non_generator_bounds", where, "non-generator bus has nonzero generation bounds"))
        if b.cost is not None and b.cost.c2 < 0:
            out.append(Violation("cost", where, f"negative quadratic cost coefficient {b.cost.c2}"))
    for j, ln in enumerate(net.lines):
        where = f"line {j} ({ln.from_bus}-{ln.to_bus})"
        if ln.from_bus == ln.to_bus:
            out.append(Violation("self_loop", where, "line connects a bus to itself"))
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            out.append(Violation("line_endpoint", where, "endpoint outside 0..N-1"))
        for key in ("i_max", "s_max", "p_max"):
            val = getattr(ln, key)
            if val is not None and not val > 0:
                out.append(Violation("line_limit", where, f"{key} must be positive, got {val}"))
    return out


def incidence_pairs(net: Network) -> Iterable:
    for ln in net.lines:
        yield ln.from_bus, ln.to_bus
