"""
Readers and writers for PFM (float maps), binary PPM/PGM (8-bit images) and
ASCII PLY point clouds.

PFM stores little-endian float32 and marks that with a negative scale line;
rows go bottom to top. PPM/PGM values map [0, 1] <-> 0..255 by rounding, so
images that are already multiples of 1/255 round-trip exactly. PLY
coordinates are written with 17 significant digits and round-trip exactly.
"""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """Malformed file; the message names the file and, when known, the line."""

    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


# -- PFM ------------------------------------------------------------------

def write_pfm(path, data) -> None:
    a = np.asarray(data)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {a.shape}")
    H, W = a.shape[:2]
    body = np.ascontiguousarray(np.flipud(a).astype("<f4"))
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n")
        f.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """(H, W) float32 for 'Pf', (H, W, 3) for 'PF'."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise FormatError(path, f"not a PFM file (magic {tag[:8]!r})", 1)
        dims = f.readline().split()
        try:
            W, H = (int(v) for v in dims)
        except ValueError:
            raise FormatError(path, f"bad dimensions {dims!r}", 2) from None
        if W <= 0 or H <= 0:
            raise FormatError(path, "dimensions must be positive", 2)
        try:
            scale = float(f.readline())
        except ValueError:
            raise FormatError(path, "bad scale line", 3) from None
        if scale == 0:
            raise FormatError(path, "scale must be non-zero", 3)
        C = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read()
    need = W * H * C * 4
    if len(raw) != need:
        raise FormatError(path, f"expected {need} data bytes, found {len(raw)}")
    a = np.frombuffer(raw, dtype=dtype).reshape(H, W, C) if C == 3 else \
        np.frombuffer(raw, dtype=dtype).reshape(H, W)
    return np.flipud(a).astype(np.float32)


# -- PPM / PGM ------------------------------------------------------------

def quantize(img) -> np.ndarray:
    """[0, 1] floats -> uint8 by rounding; values are clipped first."""
    a = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pnm(path, img) -> None:
    """Binary PGM for (H, W) or (H, W, 1), binary PPM for (H, W, 3)."""
    q = quantize(img)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[..., 0]
    if q.ndim == 2:
        magic = b"P5"
    elif q.ndim == 3 and q.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"PPM/PGM hold (H, W) or (H, W, 3) arrays, got {q.shape}")
    H, W = q.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{W} {H}\n255\n".encode())
        f.write(np.ascontiguousarray(q).tobytes())


def read_pnm(path) -> np.ndarray:
    """Float64 image in [0, 1]: (H, W) for PGM, (H, W, 3) for PPM."""
    with open(path, "rb") as f:
        tokens, line = _pnm_header(f, path)
        raw = f.read()
    magic = tokens[0]
    C = 3 if magic == b"P6" else 1
    try:
        W, H, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError(path, "bad size or maxval", line) from None
    if W <= 0 or H <= 0 or maxval != 255:
        raise FormatError(path, "only positive sizes and maxval 255 are supported", line)
    need = W * H * C
    if len(raw) != need:
        raise FormatError(path, f"expected {need} data bytes, found {len(raw)}")
    a = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return a.reshape(H, W, 3) if C == 3 else a.reshape(H, W)


def _pnm_header(f, path):
    """Read magic, width, height, maxval; the single byte after maxval is whitespace."""
    tokens, line, buf = [], 1, b""
    while len(tokens) < 4:
        ch = f.read(1)
        if not ch:
            raise FormatError(path, "truncated header", line)
        if ch == b"#" and not buf:
            f.readline()
            line += 1
            continue
        if ch.isspace():
            if buf:
                tokens.append(buf)
                buf = b""
            if ch == b"\n":
                line += 1
            continue
        buf += ch
    if tokens[0] not in (b"P5", b"P6"):
        raise FormatError(path, f"not a binary PGM/PPM file (magic {tokens[0][:8]!r})", 1)
    return tokens, line


# -- PLY ------------------------------------------------------------------

def write_ply(path, points, colors=None) -> None:
    """ASCII PLY with double x y z and optional uchar red green blue."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    C = None
    if colors is not None:
        C = np.asarray(colors)
        C = quantize(C) if C.dtype != np.uint8 else C
        C = C.reshape(-1, 3)
        if len(C) != len(P):
            raise ValueError("one colour per point is required")
    lines = ["ply", "format ascii 1.0", f"element vertex {len(P)}",
             "property double x", "property double y", "property double z"]
    if C is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
        for i in range(len(P)):
            row = " ".join(f"{v:.17g}" for v in P[i])
            if C is not None:
                row += " " + " ".join(str(int(c)) for c in C[i])
            f.write(row + "\n")


def read_ply(path):
    """(points (N, 3) float64, colors (N, 3) uint8 or None) from ASCII PLY."""
    with open(path, encoding="ascii") as f:
        lines = f.read().split("\n")
    if not lines or lines[0].strip() != "ply":
        raise FormatError(path, "missing 'ply' magic", 1)
    n, props, end = None, [], None
    for i, raw in enumerate(lines[1:], start=2):
        words = raw.split()
        if not words or words[0] == "comment":
            continue
        if words[0] == "format":
            if words[1:2] != ["ascii"]:
                raise FormatError(path, "only ascii PLY is supported", i)
        elif words[0] == "element":
            if words[1] != "vertex" or n is not None:
                raise FormatError(path, f"unsupported element {words[1]!r}", i)
            n = int(words[2])
        elif words[0] == "property":
            props.append(words[-1])
        elif words[0] == "end_header":
            end = i
            break
        else:
            raise FormatError(path, f"unexpected header line {raw!r}", i)
    if end is None or n is None:
        raise FormatError(path, "incomplete header")
    if props[:3] != ["x", "y", "z"] or props[3:] not in ([], ["red", "green", "blue"]):
        raise FormatError(path, f"unsupported vertex properties {props}")
    body = lines[end:end + n]
    if len(body) < n:
        raise FormatError(path, f"expected {n} vertices, found {len(body)}")
    P = np.zeros((n, 3))
    C = np.zeros((n, 3), dtype=np.uint8) if len(props) == 6 else None
    for k, raw in enumerate(body):
        vals = raw.split()
        if len(vals) != len(props):
            raise FormatError(path, f"expected {len(props)} values", end + 1 + k)
        try:
            P[k] = [float(v) for v in vals[:3]]
            if C is not None:
                C[k] = [int(v) for v in vals[3:]]
        except ValueError:
            raise FormatError(path, "malformed vertex", end + 1 + k) from None
    return P, C
