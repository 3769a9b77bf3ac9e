"""Byte-deterministic file formats: 16-bit PGM images, CSV tables, manifests."""

from __future__ import annotations

import os

import numpy as np

from matterwave.errors import DomainError

MAXVAL = 65535


def fmt(value):
    """Number with 9 significant digits, locale independent."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.9g}"


def pgm_bytes(image, scale=None):
    """Encode ``image`` as binary 16-bit big-endian PGM.

    Stored samples are ``round(value / scale)``; ``scale`` defaults to 1 for
    non-negative integer images that fit and to ``max / 65535`` otherwise.
    Returns ``(bytes, scale)``.
    """
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise DomainError("PGM needs a non-empty 2D array")
    vals = img.astype(float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise DomainError("PGM samples must be finite and non-negative")
    top = float(vals.max())
    if scale is None:
        integral = np.issubdtype(img.dtype, np.integer)
        if integral and top <= MAXVAL:
            scale = 1.0
        else:
            scale = top / MAXVAL if top > 0 else 1.0
    if not scale > 0:
        raise DomainError("scale must be positive")
    stored = np.clip(np.rint(vals / scale), 0, MAXVAL).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{MAXVAL}\n".encode("ascii")
    return header + stored.tobytes(), float(scale)


def write_pgm(path, image, scale=None):
    data, scale = pgm_bytes(image, scale)
    with open(path, "wb") as fh:
        fh.write(data)
    return scale


def read_pgm(path):
    """Stored samples of a 16-bit P5 file as a uint16 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise DomainError("not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != MAXVAL:
        raise DomainError("only 16-bit PGM is supported")
    pos += 1
    arr = np.frombuffer(data[pos:pos + 2 * width * height], dtype=">u2")
    return arr.reshape(height, width).astype(np.uint16)


def csv_text(header, rows):
    """Comma-separated text with a header and ``\\n`` line endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))


def read_csv(path):
    """Header tuple and float array of a numeric CSV written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines:
        raise DomainError(f"{path}: empty CSV")
    header = tuple(lines[0].split(","))
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: {exc}") from None
    return header, data.reshape(-1, len(header))


def write_curve_csv(path, x, intensity):
    write_csv(path, ("x_um", "intensity"), zip(x, intensity))


def read_curve_csv(path):
    header, data = read_csv(path)
    if header[:2] != ("x_um", "intensity"):
        raise DomainError(f"{path}: expected columns x_um,intensity")
    return data[:, 0], data[:, 1]


LOCALIZATION_COLUMNS = ("frame", "x_um", "y_um", "sigma_um", "photons", "background", "residual")


def write_localizations_csv(path, localizations):
    rows = ((l.frame_index, l.x, l.y, l.sigma, l.photons_total, l.background, l.residual)
            for l in localizations)
    write_csv(path, LOCALIZATION_COLUMNS, rows)


def write_manifest(path, items):
    """``key=value`` lines in the given order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in items:
            fh.write(f"{k}={fmt(v) if isinstance(v, (float, int, np.number)) else v}\n")


def read_manifest(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh.read().split("\n"):
            if line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def write_frame_stack(directory, stack):
    """One PGM per frame plus ``manifest.txt``; returns the file names."""
    os.makedirs(directory, exist_ok=True)
    det = stack.detector
    names = []
    items = [("frame_count", len(stack)), ("frame_rate_hz", stack.frame_rate),
             ("seed", stack.rng_seed), ("pixel_size_um", det.pixel_size),
             ("psf_sigma_um", det.psf_sigma), ("quantum_efficiency", det.quantum_efficiency),
             ("background_photons", det.background_rate), ("read_noise_counts", det.read_noise_sigma),
             ("exposure_s", det.frame_exposure),
             ("fov_um", " ".join(fmt(v) for v in det.fov))]
    for i, frame in enumerate(stack.frames):
        name = f"frame_{i:04d}.pgm"
        scale = write_pgm(os.path.join(directory, name), frame)
        items.append((f"{name}.scale", scale))
        names.append(name)
    write_manifest(os.path.join(directory, "manifest.txt"), items)
    return names


def read_frame_stack(directory):
    """Frames (count units) and manifest of a directory written by :func:`write_frame_stack`."""
    man = read_manifest(os.path.join(directory, "manifest.txt"))
    n = int(man["frame_count"])
    frames = []
    for i in range(n):
        name = f"frame_{i:04d}.pgm"
        scale = float(man.get(f"{name}.scale", 1.0))
        frames.append(np.rint(read_pgm(os.path.join(directory, name)) * scale).astype(np.int64))
    return np.array(frames), man
