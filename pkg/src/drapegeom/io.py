"""Mesh and vertex-field file I/O: ASCII OBJ, PLY (binary or ASCII) and CSV.

OBJ positions are written with 9 significant digits, which round-trips
float32 exactly; PLY can store float64 positions for a lossless round trip.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings

import numpy as np

from .errors import MeshWarning, ParseError, UnsupportedFeature
from .mesh import build_mesh

logger = logging.getLogger(__name__)

FORMATS = ("obj", "ply")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

# OBJ records read past silently
_OBJ_IGNORED = {"vt", "vn", "vp", "o", "g", "s", "l", "p"}
_OBJ_MATERIAL = {"mtllib", "usemtl"}


def _format_of(path, format):
    if format is not None:
        fmt = format.lower()
    else:
        fmt = os.path.splitext(str(path))[1].lower().lstrip(".")
    if fmt not in FORMATS:
        raise ParseError(f"unsupported mesh format {fmt!r}; use one of {FORMATS}", path)
    return fmt


def load_mesh(path, format=None):
    """Read a triangle mesh from an OBJ or PLY file (format from the suffix by default)."""
    fmt = _format_of(path, format)
    if fmt == "obj":
        return read_obj(path)
    return read_ply(path)[0]


def save_mesh(path, mesh, fields=None, format=None, float64=False, color_field=None):
    """Write ``mesh`` as OBJ or binary little-endian PLY.

    ``fields`` (name -> per-vertex scalar array) and ``color_field`` are only
    stored by PLY; OBJ has no place for them and drops them with a warning.
    """
    fmt = _format_of(path, format)
    if fmt == "obj":
        if fields:
            warnings.warn("OBJ cannot store vertex fields; they were not written",
                          UnsupportedFeature, stacklevel=2)
        write_obj(path, mesh)
    else:
        write_ply(path, mesh, fields=fields, float64=float64, color_field=color_field)


# ---------------------------------------------------------------------------
# OBJ


def _obj_index(tok, n_seen, path, lineno):
    ref = tok.split("/")[0]
    try:
        i = int(ref)
    except ValueError:
        raise ParseError(f"bad face index {tok!r}", path, lineno) from None
    if i == 0:
        raise ParseError("face index 0 is invalid (OBJ indices are 1-based)", path, lineno)
    # negative indices count back from the latest vertex
    return i - 1 if i > 0 else n_seen + i


def read_obj(path):
    """Parse ``v`` and ``f`` records; polygons are fan-triangulated with a warning."""
    verts, faces = [], []
    n_poly = 0
    skipped = set()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError("vertex needs three coordinates", path, lineno)
                try:
                    verts.append([float(t) for t in parts[1:4]])
                except ValueError:
                    raise ParseError(f"bad vertex coordinate in {line!r}", path, lineno) from None
            elif tag == "f":
                idx = [_obj_index(t, len(verts), path, lineno) for t in parts[1:]]
                if len(idx) < 3:
                    raise ParseError("face needs at least three vertices", path, lineno)
                for i in idx:
                    if i < 0 or i >= len(verts):
                        raise ParseError(f"face index {i + 1} refers to an undefined vertex",
                                         path, lineno)
                if len(idx) > 3:
                    n_poly += 1
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append((idx[0], a, b))
            elif tag in _OBJ_MATERIAL:
                skipped.add(tag)
            elif tag not in _OBJ_IGNORED:
                skipped.add(tag)
    if n_poly:
        warnings.warn(f"{path}: {n_poly} polygon(s) with more than 3 vertices were fan-triangulated",
                      MeshWarning, stacklevel=2)
    if skipped:
        warnings.warn(f"{path}: ignored OBJ records {sorted(skipped)}", UnsupportedFeature,
                      stacklevel=2)
    if not verts:
        raise ParseError("no vertices found", path)
    if not faces:
        raise ParseError("no faces found", path)
    return build_mesh(np.array(verts), np.array(faces, dtype=np.int64))


def write_obj(path, mesh):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


# ---------------------------------------------------------------------------
# PLY


def _parse_ply_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path, 1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header ends before 'end_header'", path, lineno)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unknown PLY format {' '.join(parts[1:])!r}", path, lineno)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", path, lineno)
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno)
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise ParseError("malformed list property", path, lineno)
                elements[-1]["props"].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type in {raw!r}", path, lineno)
                elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]], None))
        else:
            raise ParseError(f"unexpected header line {parts[0]!r}", path, lineno)
    if fmt is None:
        raise ParseError("header has no format line", path)
    return fmt, elements, lineno


def _read_binary_element(buf, offset, elem, endian, path):
    props = elem["props"]
    n = elem["count"]
    if all(p[2] is None for p in props):
        dt = np.dtype([(name, endian + t) for name, t, _ in props])
        end = offset + n * dt.itemsize
        if end > len(buf):
            raise ParseError(f"file truncated inside element {elem['name']!r}", path)
        return np.frombuffer(buf, dtype=dt, count=n, offset=offset), end
    if len(props) == 1:
        name, ct, it = props[0]
        cdt, idt = np.dtype(endian + ct), np.dtype(endian + it)
        # fast path: every list has length 3
        tri = np.dtype([("n", cdt), ("i", idt, (3,))])
        if offset + n * tri.itemsize <= len(buf):
            rows = np.frombuffer(buf, dtype=tri, count=n, offset=offset)
            if np.all(rows["n"] == 3):
                return {name: [r for r in rows["i"]]}, offset + n * tri.itemsize
        out = []
        for _ in range(n):
            if offset + cdt.itemsize > len(buf):
                raise ParseError(f"file truncated inside element {elem['name']!r}", path)
            cnt = int(np.frombuffer(buf, dtype=cdt, count=1, offset=offset)[0])
            offset += cdt.itemsize
            if offset + cnt * idt.itemsize > len(buf):
                raise ParseError(f"file truncated inside element {elem['name']!r}", path)
            out.append(np.frombuffer(buf, dtype=idt, count=cnt, offset=offset))
            offset += cnt * idt.itemsize
        return {name: out}, offset
    raise ParseError(f"element {elem['name']!r} mixes list and scalar properties", path)


def _read_ascii_elements(lines, elements, first_line, path):
    data = {}
    pos = 0
    for elem in elements:
        rows = []
        for _ in range(elem["count"]):
            if pos >= len(lines):
                raise ParseError(f"file truncated inside element {elem['name']!r}", path)
            toks = lines[pos].split()
            lineno = first_line + pos + 1
            pos += 1
            vals = {}
            k = 0
            try:
                for name, t, it in elem["props"]:
                    if it is None:
                        vals[name] = float(toks[k])
                        k += 1
                    else:
                        cnt = int(toks[k])
                        vals[name] = np.array([int(x) for x in toks[k + 1:k + 1 + cnt]])
                        if len(vals[name]) != cnt:
                            raise IndexError
                        k += 1 + cnt
            except (ValueError, IndexError):
                raise ParseError("malformed element row", path, lineno) from None
            rows.append(vals)
        data[elem["name"]] = rows
    return data


def read_ply(path):
    """Read a PLY mesh and its extra per-vertex scalar properties.

    Returns ``(mesh, fields)``; colour channels are skipped. Polygons are
    fan-triangulated with a warning.
    """
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        body = fh.read()
    names = [e["name"] for e in elements]
    if "vertex" not in names or "face" not in names:
        raise ParseError("PLY needs 'vertex' and 'face' elements", path)
    vert_elem = elements[names.index("vertex")]
    vprops = [p[0] for p in vert_elem["props"]]
    for c in "xyz":
        if c not in vprops:
            raise ParseError(f"vertex element lacks property {c!r}", path)
    face_elem = elements[names.index("face")]
    list_names = [p[0] for p in face_elem["props"] if p[2] is not None]
    if not list_names:
        raise ParseError("face element has no index list", path)

    if fmt == "ascii":
        lines = [ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
        data = _read_ascii_elements(lines, elements, header_lines, path)
        vrows = data["vertex"]
        vcols = {p: np.array([r[p] for r in vrows]) for p in vprops}
        polys = [r[list_names[0]] for r in data["face"]]
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        offset = 0
        parsed = {}
        for elem in elements:
            parsed[elem["name"]], offset = _read_binary_element(body, offset, elem, endian, path)
            if "vertex" in parsed and "face" in parsed:
                break
        vcols = {p: np.asarray(parsed["vertex"][p]) for p in vprops}
        polys = parsed["face"][list_names[0]]

    v = np.stack([vcols["x"], vcols["y"], vcols["z"]], axis=1).astype(np.float64)
    tris = []
    n_poly = 0
    for k, poly in enumerate(polys):
        poly = np.asarray(poly, dtype=np.int64)
        if len(poly) < 3:
            raise ParseError(f"face {k} has fewer than three vertices", path)
        if len(poly) > 3:
            n_poly += 1
        for a, b in zip(poly[1:-1], poly[2:]):
            tris.append((poly[0], a, b))
    if n_poly:
        warnings.warn(f"{path}: {n_poly} polygon(s) were fan-triangulated", MeshWarning, stacklevel=2)
    skip = {"x", "y", "z", "red", "green", "blue", "alpha"}
    fields = {p: vcols[p].astype(np.float64) for p in vprops if p not in skip}
    return build_mesh(v, np.array(tris, dtype=np.int64).reshape(-1, 3)), fields


def color_ramp(values):
    """Min-max map of ``values`` to a blue-to-red RGB ramp (uint8); non-finite values are grey."""
    v = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(v)
    rgb = np.full((len(v), 3), 128, dtype=np.uint8)
    if ok.any():
        lo, hi = v[ok].min(), v[ok].max()
        t = np.zeros(len(v))
        if hi > lo:
            t[ok] = (v[ok] - lo) / (hi - lo)
        rgb[ok, 0] = np.round(255 * t[ok])
        rgb[ok, 1] = np.round(255 * (1 - np.abs(2 * t[ok] - 1)) * 0.6)
        rgb[ok, 2] = np.round(255 * (1 - t[ok]))
    return rgb


def write_ply(path, mesh, fields=None, float64=False, color_field=None):
    """Binary little-endian PLY with optional scalar vertex properties and a colour ramp."""
    fields = dict(fields or {})
    n = mesh.n_vertices
    ftype = "f8" if float64 else "f4"
    cols = [("x", ftype), ("y", ftype), ("z", ftype)]
    for name, vals in fields.items():
        vals = np.asarray(vals)
        if vals.shape != (n,):
            raise ValueError(f"field {name!r} must hold one scalar per vertex")
        cols.append((name, "f8" if float64 else "f4"))
    if color_field is not None:
        if color_field not in fields:
            raise ValueError(f"colour field {color_field!r} is not among the fields")
        cols += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    dt = np.dtype([(name, "<" + t) for name, t in cols])
    rec = np.zeros(n, dtype=dt)
    for i, c in enumerate("xyz"):
        rec[c] = mesh.vertices[:, i]
    for name, vals in fields.items():
        rec[name] = vals
    if color_field is not None:
        rgb = color_ramp(fields[color_field])
        rec["red"], rec["green"], rec["blue"] = rgb.T
    tname = {"f4": "float", "f8": "double", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {tname[t]} {name}" for name, t in cols]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
    frec = np.zeros(mesh.n_faces, dtype=fdt)
    frec["n"] = 3
    frec["i"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())
        fh.write(frec.tobytes())


# ---------------------------------------------------------------------------
# CSV


def write_field_csv(path, mesh, fields):
    """Per-vertex table ``vertex_index,x,y,z,<field columns>``.

    Vector fields of shape (n, 3) expand to ``name_x, name_y, name_z``.
    """
    names, cols = [], []
    for name, vals in dict(fields).items():
        vals = np.asarray(vals, dtype=np.float64)
        if vals.shape == (mesh.n_vertices,):
            names.append(name)
            cols.append(vals)
        elif vals.shape == (mesh.n_vertices, 3):
            for i, c in enumerate("xyz"):
                names.append(f"{name}_{c}")
                cols.append(vals[:, i])
        else:
            raise ValueError(f"field {name!r} has shape {vals.shape}, expected per-vertex values")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_index", "x", "y", "z"] + names)
        for i in range(mesh.n_vertices):
            row = [i] + [repr(float(c)) for c in mesh.vertices[i]]
            row += [repr(float(c[i])) for c in cols]
            w.writerow(row)


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`: ``(positions, {name: values})``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["vertex_index", "x", "y", "z"]:
        raise ParseError("CSV header must start with vertex_index,x,y,z", path, 1)
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    except ValueError:
        raise ParseError("non-numeric CSV cell", path) from None
    return data[:, 1:4], {name: data[:, 4 + i] for i, name in enumerate(rows[0][4:])}
