"""Model files and result records.

Model files are YAML documents restricted to the schema in
docs/model_format.md.  Parsing works on the composed node graph rather than
loaded Python objects so every diagnostic can carry a line, column and
dotted field path.  Records are written as CSV or JSON with numbers printed
to 17 significant digits, which round-trips IEEE doubles exactly.
"""

import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
import yaml
from yaml.constructor import SafeConstructor
from yaml.nodes import MappingNode, ScalarNode, SequenceNode

from . import filter as engine
from .errors import ParseError
from .expr import parse_operator_expr, parse_scalar_expr
from .gaussian_field import validate_gaussian

SCHEMA_VERSION = 1
MAX_DIM = 64
MAX_CHANNELS = 16
MAX_TEXT = 1_000_000
MAX_EXPR = 10_000
MAX_SNAPSHOTS = 10_000
FIELD_MODES = ("auto", "vacuum", "gaussian")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_TOP_KEYS = ("schema_version", "system", "field", "measurement", "observables", "simulation")
_SYSTEM_KEYS = ("dims", "dim", "hamiltonian", "couplings", "initial_state", "scattering")
_FIELD_KEYS = ("n", "N", "M", "mode")
_MEASUREMENT_KEYS = ("G",)
_SIMULATION_KEYS = ("T", "dt", "trajectories", "seed", "snapshots")


@dataclass
class SimulationSettings:
    T: float | None = None
    dt: float | None = None
    trajectories: int | None = None
    seed: int | None = None
    snapshots: tuple = ()


@dataclass
class ModelBundle:
    """Fully elaborated contents of a model file.

    Expressions are kept next to their matrices so the bundle can be written
    back out with :func:`dump_model`.
    """

    dims: tuple
    hamiltonian: str
    couplings: list
    initial_state: str
    H: np.ndarray
    L: np.ndarray
    rho0: np.ndarray
    bosonic: tuple
    N: np.ndarray
    M: np.ndarray
    field_mode: str
    G: np.ndarray
    observable_exprs: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    model: object = None

    @property
    def d(self):
        return self.H.shape[0]

    @property
    def n(self):
        return self.L.shape[0]

    def system(self):
        return engine.make_system(self.H, self.L, self.rho0, dims=self.dims, bosonic=self.bosonic)

    def field_spec(self):
        return validate_gaussian(self.N, self.M)

    def build(self, completion_order=None):
        spec = self.field_spec()
        self.model = engine.build_filter_model(
            self.system(), self.G, field=spec, mode=self.field_mode, completion_order=completion_order
        )
        return self.model


# ---------------------------------------------------------------------------
# node helpers


def _err(msg, node, path):
    line = col = None
    if node is not None and node.start_mark is not None:
        line, col = node.start_mark.line + 1, node.start_mark.column + 1
    return ParseError(msg, line=line, column=col, path=path)


def _kind(node):
    return {MappingNode: "mapping", SequenceNode: "list", ScalarNode: "scalar"}.get(type(node), "node")


_constructor = SafeConstructor()


def _scalar(node, path):
    if not isinstance(node, ScalarNode):
        raise _err(f"expected a scalar, found a {_kind(node)}", node, path)
    try:
        return _constructor.construct_object(node)
    except (yaml.YAMLError, ValueError, OverflowError) as exc:
        raise _err(f"bad scalar: {exc}", node, path) from None


def _mapping(node, path, allowed):
    if not isinstance(node, MappingNode):
        raise _err(f"expected a mapping, found a {_kind(node)}", node, path)
    out = {}
    for knode, vnode in node.value:
        key = _scalar(knode, path)
        if not isinstance(key, str):
            raise _err(f"keys must be strings, found {key!r}", knode, path)
        sub = f"{path}.{key}" if path else key
        if allowed is not None and key not in allowed:
            raise _err(f"unknown key {key!r} (allowed: {', '.join(allowed)})", knode, sub)
        if key in out:
            raise _err(f"duplicate key {key!r}", knode, sub)
        out[key] = vnode
    return out


def _sequence(node, path):
    if not isinstance(node, SequenceNode):
        raise _err(f"expected a list, found a {_kind(node)}", node, path)
    return node.value


def _string(node, path):
    val = _scalar(node, path)
    if isinstance(val, bool) or val is None:
        raise _err(f"expected an expression, found {val!r}", node, path)
    if isinstance(val, (int, float)):
        val = repr(val)
    if not isinstance(val, str):
        raise _err(f"expected an expression string, found {type(val).__name__}", node, path)
    if len(val) > MAX_EXPR:
        raise _err(f"expression longer than {MAX_EXPR} characters", node, path)
    return val


def _real(node, path, positive=False):
    val = _scalar(node, path)
    if isinstance(val, bool) or val is None:
        raise _err(f"expected a number, found {val!r}", node, path)
    if isinstance(val, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            z = parse_scalar_expr(val)
        except ParseError as exc:
            raise _err(exc.reason, node, path) from None
        if z.imag != 0:
            raise _err(f"expected a real number, found {val!r}", node, path)
        val = z.real
    if not isinstance(val, (int, float)):
        raise _err(f"expected a number, found {type(val).__name__}", node, path)
    val = float(val)
    if not math.isfinite(val):
        raise _err("number must be finite", node, path)
    if positive and val <= 0:
        raise _err(f"must be positive, got {val:g}", node, path)
    return val


def _int(node, path, minimum=None, maximum=None):
    val = _scalar(node, path)
    if isinstance(val, bool) or not isinstance(val, int):
        raise _err(f"expected an integer, found {val!r}", node, path)
    if minimum is not None and val < minimum:
        raise _err(f"must be at least {minimum}, got {val}", node, path)
    if maximum is not None and val > maximum:
        raise _err(f"must be at most {maximum}, got {val}", node, path)
    return val


def _is_real_scalar(node):
    if not isinstance(node, ScalarNode):
        return False
    try:
        val = _constructor.construct_object(node)
    except (yaml.YAMLError, ValueError, OverflowError):
        return False
    return isinstance(val, (int, float)) and not isinstance(val, bool)


def _complex(node, path):
    """Number, ``"a+bi"`` string or ``[re, im]`` pair."""
    if isinstance(node, SequenceNode):
        items = node.value
        if len(items) != 2:
            raise _err(f"complex pair needs exactly 2 entries [re, im], got {len(items)}", node, path)
        return complex(_real(items[0], path + "[0]"), _real(items[1], path + "[1]"))
    val = _scalar(node, path)
    if isinstance(val, bool) or val is None:
        raise _err(f"expected a complex number, found {val!r}", node, path)
    if isinstance(val, (int, float)):
        z = complex(val)
    elif isinstance(val, str):
        if len(val) > MAX_EXPR:
            raise _err(f"expression longer than {MAX_EXPR} characters", node, path)
        try:
            z = parse_scalar_expr(val)
        except ParseError as exc:
            raise _err(exc.reason, node, path) from None
    else:
        raise _err(f"expected a complex number, found {type(val).__name__}", node, path)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise _err("number must be finite", node, path)
    return z


def _matrix(node, path, cols, rows=None):
    """Complex matrix with ``cols`` columns (and ``rows`` rows when fixed).

    A bare scalar is accepted for a 1 x 1 matrix.  With one column, a row of
    two plain numbers is read as a single ``[re, im]`` entry.
    """
    if not isinstance(node, SequenceNode):
        if cols == 1 and rows in (None, 1):
            return np.array([[_complex(node, path)]])
        raise _err(f"expected a matrix (list of rows), found a {_kind(node)}", node, path)
    row_nodes = node.value
    if rows is not None and len(row_nodes) != rows:
        raise _err(f"dimension mismatch: expected {rows} rows, got {len(row_nodes)}", node, path)
    if not row_nodes:
        raise _err("matrix has no rows", node, path)
    if len(row_nodes) > MAX_DIM:
        raise _err(f"matrix has more than {MAX_DIM} rows", node, path)
    out = np.zeros((len(row_nodes), cols), dtype=complex)
    for i, rnode in enumerate(row_nodes):
        rpath = f"{path}[{i}]"
        if not isinstance(rnode, SequenceNode):
            if cols != 1:
                raise _err(f"dimension mismatch: expected a row of {cols} entries", rnode, rpath)
            out[i, 0] = _complex(rnode, rpath)
            continue
        entries = rnode.value
        if cols == 1 and len(entries) == 2 and all(_is_real_scalar(e) for e in entries):
            out[i, 0] = _complex(rnode, rpath)
            continue
        if len(entries) != cols:
            raise _err(f"dimension mismatch: expected {cols} columns, got {len(entries)}", rnode, rpath)
        for j, enode in enumerate(entries):
            out[i, j] = _complex(enode, f"{rpath}[{j}]")
    return out


def _operator(node, path, dims):
    text = _string(node, path)
    try:
        return (text, *parse_operator_expr(text, dims, with_info=True))
    except ParseError as exc:
        col = node.start_mark.column + 1
        if exc.column is not None and node.style in (None, '"', "'") and node.start_mark.line == node.end_mark.line:
            col += exc.column - 1 + (node.style is not None)
        raise ParseError(exc.reason, line=node.start_mark.line + 1, column=col, path=path) from None


# ---------------------------------------------------------------------------
# model documents


def _compose(text):
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"model file is not UTF-8: {exc}") from None
    if not isinstance(text, str):
        raise ParseError(f"expected text, got {type(text).__name__}")
    if len(text) > MAX_TEXT:
        raise ParseError(f"model file larger than {MAX_TEXT} characters")
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ParseError(f"syntax error: {exc.problem or exc.context}", line=line, column=col) from None
    except yaml.YAMLError as exc:
        raise ParseError(f"syntax error: {exc}") from None
    except RecursionError:
        raise ParseError("document nested too deeply") from None
    if root is None:
        raise ParseError("empty model document")
    return root


def _parse_dims(sysmap):
    if ("dims" in sysmap) == ("dim" in sysmap):
        node = sysmap.get("dims") or sysmap.get("dim")
        raise _err("give exactly one of system.dims or system.dim", node, "system")
    if "dim" in sysmap:
        return (_int(sysmap["dim"], "system.dim", 1, MAX_DIM),)
    node = sysmap["dims"]
    if isinstance(node, ScalarNode):
        return (_int(node, "system.dims", 1, MAX_DIM),)
    items = _sequence(node, "system.dims")
    if not items or len(items) > 8:
        raise _err("system.dims needs between 1 and 8 entries", node, "system.dims")
    dims = tuple(_int(x, f"system.dims[{k}]", 1) for k, x in enumerate(items))
    if math.prod(dims) > MAX_DIM:
        raise _err(f"total dimension {math.prod(dims)} exceeds {MAX_DIM}", node, "system.dims")
    return dims


def _parse_scattering(node, n):
    path = "system.scattering"
    if isinstance(node, ScalarNode):
        val = _scalar(node, path)
        if isinstance(val, str) and val.strip().lower() == "identity":
            return
    S = _matrix(node, path, n, n)
    dev = float(np.max(np.abs(S - np.eye(n))))
    if dev > 1e-12:
        raise _err(
            f"scattering matrix must be the identity (max deviation {dev:.3e}); gauge coupling is not supported",
            node,
            path,
        )


def _parse_system(node):
    sysmap = _mapping(node, "system", _SYSTEM_KEYS)
    for key in ("hamiltonian", "couplings", "initial_state"):
        if key not in sysmap:
            raise _err(f"missing required key system.{key}", node, "system")
    dims = _parse_dims(sysmap)
    d = math.prod(dims)
    bosonic = set()

    h_text, H, lad = _operator(sysmap["hamiltonian"], "system.hamiltonian", dims)
    bosonic.update(lad)
    cnode = sysmap["couplings"]
    cnodes = [cnode] if isinstance(cnode, ScalarNode) else _sequence(cnode, "system.couplings")
    if not cnodes:
        raise _err("at least one coupling is required", cnode, "system.couplings")
    if len(cnodes) > MAX_CHANNELS:
        raise _err(f"more than {MAX_CHANNELS} couplings", cnode, "system.couplings")
    c_texts, Ls = [], []
    for k, cn in enumerate(cnodes):
        text, Lk, lad = _operator(cn, f"system.couplings[{k}]", dims)
        bosonic.update(lad)
        c_texts.append(text)
        Ls.append(Lk)
    r_text, rho0, lad = _operator(sysmap["initial_state"], "system.initial_state", dims)
    bosonic.update(lad)
    if "scattering" in sysmap:
        _parse_scattering(sysmap["scattering"], len(Ls))
    assert H.shape == (d, d)
    return dict(
        dims=dims,
        hamiltonian=h_text,
        couplings=c_texts,
        initial_state=r_text,
        H=H,
        L=np.stack(Ls),
        rho0=rho0,
        bosonic=tuple(sorted(bosonic)),
    )


def _parse_field(node, n):
    if node is None:
        return dict(N=np.zeros((n, n), dtype=complex), M=np.zeros((n, n), dtype=complex), field_mode="auto")
    fmap = _mapping(node, "field", _FIELD_KEYS)
    if "n" in fmap:
        nf = _int(fmap["n"], "field.n", 1, MAX_CHANNELS)
        if nf != n:
            raise _err(f"dimension mismatch: field.n = {nf} but there are {n} couplings", fmap["n"], "field.n")
    N = _matrix(fmap["N"], "field.N", n, n) if "N" in fmap else np.zeros((n, n), dtype=complex)
    M = _matrix(fmap["M"], "field.M", n, n) if "M" in fmap else np.zeros((n, n), dtype=complex)
    mode = "auto"
    if "mode" in fmap:
        mode = _scalar(fmap["mode"], "field.mode")
        if mode not in FIELD_MODES:
            raise _err(f"field.mode must be one of {', '.join(FIELD_MODES)}", fmap["mode"], "field.mode")
    return dict(N=N, M=M, field_mode=mode)


def _parse_measurement(node, n):
    mmap = _mapping(node, "measurement", _MEASUREMENT_KEYS)
    if "G" not in mmap:
        raise _err("missing required key measurement.G", node, "measurement")
    return _matrix(mmap["G"], "measurement.G", n)


def _parse_observables(node, dims):
    exprs, ops = {}, {}
    if node is None:
        return exprs, ops
    omap = _mapping(node, "observables", None)
    for name, vnode in omap.items():
        if not _NAME.match(name):
            raise _err(f"observable name {name!r} must be an identifier", vnode, f"observables.{name}")
        text, op, _ = _operator(vnode, f"observables.{name}", dims)
        exprs[name] = text
        ops[name] = op
    return exprs, ops


def _parse_simulation(node):
    sim = SimulationSettings()
    if node is None:
        return sim
    smap = _mapping(node, "simulation", _SIMULATION_KEYS)
    if "T" in smap:
        sim.T = _real(smap["T"], "simulation.T", positive=True)
    if "dt" in smap:
        sim.dt = _real(smap["dt"], "simulation.dt", positive=True)
    if "trajectories" in smap:
        sim.trajectories = _int(smap["trajectories"], "simulation.trajectories", 1, 10**8)
    if "seed" in smap:
        sim.seed = _int(smap["seed"], "simulation.seed", 0, 2**63 - 1)
    if "snapshots" in smap:
        items = _sequence(smap["snapshots"], "simulation.snapshots")
        if len(items) > MAX_SNAPSHOTS:
            raise _err(f"more than {MAX_SNAPSHOTS} snapshots", smap["snapshots"], "simulation.snapshots")
        sim.snapshots = tuple(_real(x, f"simulation.snapshots[{k}]") for k, x in enumerate(items))
    return sim


def parse_model(text, validate=True):
    """Parse a model document into a :class:`ModelBundle`.

    Structural problems raise :class:`ParseError` with a line, column and
    field path.  With ``validate`` the filter model is also built, so
    physical problems surface as ``ValidationError``.
    """
    try:
        root = _compose(text)
        top = _mapping(root, "", _TOP_KEYS)
        if "schema_version" in top:
            ver = _int(top["schema_version"], "schema_version")
            if ver != SCHEMA_VERSION:
                raise _err(f"unsupported schema_version {ver} (expected {SCHEMA_VERSION})", top["schema_version"], "schema_version")
        for key in ("system", "measurement"):
            if key not in top:
                raise _err(f"missing required section {key!r}", root, key)
        system = _parse_system(top["system"])
        n = system["L"].shape[0]
        fld = _parse_field(top.get("field"), n)
        G = _parse_measurement(top["measurement"], n)
        exprs, ops = _parse_observables(top.get("observables"), system["dims"])
        sim = _parse_simulation(top.get("simulation"))
    except RecursionError:
        raise ParseError("document nested too deeply") from None
    bundle = ModelBundle(**system, **fld, G=G, observable_exprs=exprs, observables=ops, simulation=sim)
    if validate:
        bundle.build()
    return bundle


def load_model(path, validate=True):
    with open(path, "rb") as fh:
        data = fh.read(MAX_TEXT + 1)
    return parse_model(data, validate=validate)


def _pairs(A):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(A)]


def dump_model(bundle):
    """YAML text that parses back to the same bundle."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "system": {
            "dims": list(bundle.dims),
            "hamiltonian": bundle.hamiltonian,
            "couplings": list(bundle.couplings),
            "initial_state": bundle.initial_state,
        },
        "field": {"n": bundle.n, "N": _pairs(bundle.N), "M": _pairs(bundle.M), "mode": bundle.field_mode},
        "measurement": {"G": _pairs(bundle.G)},
    }
    if bundle.observable_exprs:
        doc["observables"] = dict(bundle.observable_exprs)
    sim = bundle.simulation
    sdoc = {k: getattr(sim, k) for k in ("T", "dt", "trajectories", "seed") if getattr(sim, k) is not None}
    if sim.snapshots:
        sdoc["snapshots"] = list(sim.snapshots)
    if sdoc:
        doc["simulation"] = sdoc
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# records


def fmt(x):
    """17 significant digits; NaN and infinities are not valid record values."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x!r}")
    return f"{x:.17g}"


def _json_dump(obj, out):
    if isinstance(obj, dict):
        out.write("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.write(",")
            out.write(json.dumps(str(k)))
            out.write(":")
            _json_dump(v, out)
        out.write("}")
    elif isinstance(obj, (list, tuple)):
        out.write("[")
        for i, v in enumerate(obj):
            if i:
                out.write(",")
            _json_dump(v, out)
        out.write("]")
    elif isinstance(obj, np.ndarray):
        _json_dump(obj.tolist(), out)
    elif obj is None or isinstance(obj, (bool, np.bool_)):
        out.write(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(fmt(obj))
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def _cplx(arr):
    arr = np.asarray(arr)
    return {"re": arr.real, "im": arr.imag}


def _uncplx(obj):
    return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)


def _columns(names, values):
    return {name: _cplx(values[:, k]) for k, name in enumerate(names)}


def _record_doc(rec):
    doc = {"schema_version": SCHEMA_VERSION, "kind": rec.kind}
    if rec.kind == "trajectory":
        doc.update(
            seed=rec.seed,
            dt=rec.dt,
            t=rec.times,
            observables=_columns(rec.observable_names, rec.observables),
            dY=rec.dY,
            nu=rec.nu,
            snapshot_times=list(rec.snapshot_times),
            snapshots=_cplx(rec.snapshots),
            diagnostics=rec.diagnostics,
        )
    elif rec.kind == "master":
        doc.update(
            dt=rec.dt,
            t=rec.times,
            observables=_columns(rec.observable_names, rec.observables),
            snapshot_times=list(rec.snapshot_times),
            snapshots=_cplx(rec.snapshots),
        )
    elif rec.kind == "ensemble":
        doc.update(
            count=rec.count,
            base_seed=rec.base_seed,
            dt=rec.dt,
            t=rec.times,
            observables=_columns(rec.observable_names, rec.observable_mean),
            std_error=_columns(rec.observable_names, rec.observable_se),
            max_deviation=rec.deviation_grid,
            mc_se=rec.se_grid,
            snapshot_times=list(rec.snapshot_times),
            snapshot_max_deviation=rec.max_deviation,
            snapshot_mc_se=rec.max_se,
            rho_mean=_cplx(rec.rho_mean),
            rho_se=_cplx(rec.rho_se),
            master_rho=_cplx(rec.master_rho),
            innovations={
                "nu_final_mean": rec.nu_final_mean,
                "nu_final_se": rec.nu_final_se,
                "quadratic_variation": rec.quadratic_variation,
                "expected_quadratic_variation": rec.expected_quadratic_variation,
            },
            diagnostics=rec.diagnostics,
        )
    else:
        raise ValueError(f"unknown record kind {rec.kind!r}")
    return doc


def _csv_header(rec):
    meta = [f"kind={rec.kind}", f"schema_version={SCHEMA_VERSION}", f"dt={fmt(rec.dt)}"]
    lines = []
    cols = ["t"]
    data = [rec.times]
    if rec.kind == "ensemble":
        meta += [f"count={rec.count}", f"base_seed={rec.base_seed}"]
        for k, name in enumerate(rec.observable_names):
            cols += [f"{name}_re", f"{name}_im", f"{name}_se_re", f"{name}_se_im"]
            data += [
                rec.observable_mean[:, k].real,
                rec.observable_mean[:, k].imag,
                rec.observable_se[:, k].real,
                rec.observable_se[:, k].imag,
            ]
        cols += ["max_deviation", "mc_se"]
        data += [rec.deviation_grid, rec.se_grid]
        inn = _record_doc(rec)["innovations"]
        for key, val in inn.items():
            flat = np.asarray(val).ravel()
            lines.append(f"# {key}=" + ";".join(fmt(x) for x in flat))
    else:
        if rec.kind == "trajectory":
            meta.append(f"seed={rec.seed}")
        for k, name in enumerate(rec.observable_names):
            cols += [f"{name}_re", f"{name}_im"]
            data += [rec.observables[:, k].real, rec.observables[:, k].imag]
        if rec.kind == "trajectory":
            m = rec.dY.shape[1]
            cols += [f"dY_{j + 1}" for j in range(m)] + [f"nu_{j + 1}" for j in range(m)]
            data += [rec.dY[:, j] for j in range(m)] + [rec.nu[:, j] for j in range(m)]
    return ["# qfilter " + " ".join(meta)] + lines, cols, data


def write_records(result, format="csv"):
    """Serialise a trajectory, ensemble or master record to bytes."""
    if format == "json":
        out = io.StringIO()
        _json_dump(_record_doc(result), out)
        out.write("\n")
        return out.getvalue().encode()
    if format != "csv":
        raise ValueError(f"unsupported format {format!r} (use csv or json)")
    comments, cols, data = _csv_header(result)
    out = io.StringIO()
    for line in comments:
        out.write(line + "\n")
    out.write(",".join(cols) + "\n")
    table = np.column_stack(data)
    for row in table:
        out.write(",".join(fmt(x) for x in row) + "\n")
    return out.getvalue().encode()


def _names_values(cols):
    names = list(cols)
    if not names:
        return names, None
    return names, np.column_stack([_uncplx(cols[k]) for k in names])


def _snapshots(doc):
    return _uncplx(doc["snapshots"])


def read_records(data, format="json"):
    """Inverse of :func:`write_records`.

    JSON gives back the record object; CSV gives ``(metadata, columns)``
    where ``columns`` maps header names to float arrays.
    """
    if isinstance(data, bytes):
        data = data.decode()
    if format == "csv":
        return _read_csv(data)
    if format != "json":
        raise ValueError(f"unsupported format {format!r} (use csv or json)")
    doc = json.loads(data)
    kind = doc.get("kind")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    times = np.asarray(doc["t"], dtype=float)
    names, values = _names_values(doc["observables"])
    if values is None:
        values = np.zeros((len(times), 0), dtype=complex)
    if kind == "trajectory":
        return engine.TrajectoryRecord(
            seed=doc["seed"],
            dt=doc["dt"],
            times=times,
            dY=np.asarray(doc["dY"], dtype=float),
            nu=np.asarray(doc["nu"], dtype=float),
            observable_names=names,
            observables=values,
            snapshot_times=doc["snapshot_times"],
            snapshots=_snapshots(doc),
            diagnostics=doc["diagnostics"],
        )
    if kind == "master":
        return engine.MasterRecord(
            dt=doc["dt"],
            times=times,
            observable_names=names,
            observables=values,
            snapshot_times=doc["snapshot_times"],
            snapshots=_snapshots(doc),
        )
    if kind == "ensemble":
        _, se = _names_values(doc["std_error"])
        inn = doc["innovations"]
        return engine.EnsembleResult(
            count=doc["count"],
            base_seed=doc["base_seed"],
            dt=doc["dt"],
            times=times,
            observable_names=names,
            observable_mean=values,
            observable_se=se if se is not None else np.zeros_like(values),
            snapshot_times=doc["snapshot_times"],
            rho_mean=_uncplx(doc["rho_mean"]),
            rho_se=_uncplx(doc["rho_se"]),
            master_rho=_uncplx(doc["master_rho"]),
            max_deviation=np.asarray(doc["snapshot_max_deviation"], dtype=float),
            max_se=np.asarray(doc["snapshot_mc_se"], dtype=float),
            deviation_grid=np.asarray(doc["max_deviation"], dtype=float),
            se_grid=np.asarray(doc["mc_se"], dtype=float),
            nu_final_mean=np.asarray(inn["nu_final_mean"], dtype=float),
            nu_final_se=np.asarray(inn["nu_final_se"], dtype=float),
            quadratic_variation=np.asarray(inn["quadratic_variation"], dtype=float),
            expected_quadratic_variation=np.asarray(inn["expected_quadratic_variation"], dtype=float),
            diagnostics=doc["diagnostics"],
        )
    raise ValueError(f"unknown record kind {kind!r}")


def _read_csv(text):
    meta = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        body = lines[k][1:].strip()
        if body.startswith("qfilter "):
            body = body[len("qfilter ") :]
        for item in body.split():
            if "=" in item:
                key, val = item.split("=", 1)
                meta[key] = val
        k += 1
    header = lines[k].split(",")
    rows = [list(map(float, line.split(","))) for line in lines[k + 1 :] if line]
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return meta, {name: table[:, j] for j, name in enumerate(header)}
