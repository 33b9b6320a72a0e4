"""Binary field dumps and on-disk records.

Field dump layout (documented byte-exactly; all integers little-endian):

    offset  size  content
    0       4     magic ``TSNS``
    4       4     u32 format version (currently 1)
    8       4     u32 n (grid size per dimension)
    12      1     u8 rank (1 scalar, 2 vector)
    13      1     u8 level tag (0 raw/white, 1 velocity, 2 vorticity, 3 hat)
    14      ...   rank * n^2 pairs of f64 (re, im), components in order,
                  wavenumbers row-major with k1, k2 running over
                  -n/2+1 ... n/2 (in that order per axis)

Trajectories and noise realisations are directories holding a JSON
manifest next to the dumps; noise files concatenate one field record per
time step.  Shift paths extend the base header with an (s, tau) index (see
``save_shift_path``).
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dynamics import NoiseRecord, TrajectoryRecord, drift_operator
from .gaussian import NoiseSpec
from .spectral import SpectralField, TorusGrid

__all__ = [
    "field_to_bytes",
    "field_from_bytes",
    "save_field",
    "load_field",
    "save_noise",
    "load_noise",
    "save_trajectory",
    "save_shift_path",
    "load_shift_path",
    "write_csv",
    "sha256_file",
]

MAGIC = b"TSNS"
VERSION = 1
LEVEL_TAGS = {None: 0, "velocity": 1, "vorticity": 2, "hat": 3}
TAG_LEVELS = {v: k for k, v in LEVEL_TAGS.items()}
_HEADER = struct.Struct("<4sIIBB")


def _wavenumber_order(n: int) -> np.ndarray:
    return np.arange(-n // 2 + 1, n // 2 + 1) % n


def field_to_bytes(field: SpectralField) -> bytes:
    grid = field.grid
    rank = 2 if field.is_vector else 1
    head = _HEADER.pack(MAGIC, VERSION, grid.n, rank, LEVEL_TAGS[field.level])
    idx = _wavenumber_order(grid.n)
    c = field.coeffs[np.ix_(idx, idx)] if rank == 1 else field.coeffs[:, idx][:, :, idx]
    flat = np.empty(c.size * 2, dtype="<f8")
    flat[0::2] = np.real(c).ravel()
    flat[1::2] = np.imag(c).ravel()
    return head + flat.tobytes()


def field_from_bytes(buf: bytes) -> SpectralField:
    magic, version, n, rank, tag = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError("not a TSNS field dump")
    if version != VERSION:
        raise ValueError(f"unsupported dump version {version}")
    grid = TorusGrid(int(n))
    count = rank * n * n * 2
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size)
    c = (flat[0::2] + 1j * flat[1::2]).reshape((rank, n, n) if rank == 2 else (n, n))
    idx = _wavenumber_order(int(n))
    out = np.empty_like(c)
    if rank == 1:
        out[np.ix_(idx, idx)] = c
    else:
        tmp = np.empty_like(c)
        tmp[:, idx] = c
        out = np.empty_like(c)
        out[:, :, idx] = tmp
    return SpectralField(grid, out, TAG_LEVELS[int(tag)])


def save_field(path, field: SpectralField) -> None:
    Path(path).write_bytes(field_to_bytes(field))


def load_field(path) -> SpectralField:
    return field_from_bytes(Path(path).read_bytes())


RECORD_SIZE_SCALAR = _HEADER.size  # plus payload, see _record_size


def _record_size(n: int, rank: int) -> int:
    return _HEADER.size + rank * n * n * 16


def save_noise(directory, record: NoiseRecord, spec: NoiseSpec | None = None) -> None:
    """Persist a noise realisation: manifest + concatenated per-step dumps."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "noise_record",
        "n": record.grid.n,
        "dt": record.dt,
        "n_steps": record.n_steps,
        "seed_info": list(map(str, record.seed_info)),
        "noise_spec": None
        if spec is None
        else {"alpha": spec.alpha, "gamma": spec.gamma, "level": spec.level},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    with open(d / "increments.tsns", "wb") as fh:
        for j in range(record.n_steps):
            fh.write(field_to_bytes(SpectralField(record.grid, record.increments[j], None)))


def load_noise(directory) -> NoiseRecord:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    n, n_steps = manifest["n"], manifest["n_steps"]
    grid = TorusGrid(n)
    size = _record_size(n, 1)
    buf = (d / "increments.tsns").read_bytes()
    inc = np.empty((n_steps, n, n), dtype=np.complex128)
    for j in range(n_steps):
        inc[j] = field_from_bytes(buf[j * size : (j + 1) * size]).coeffs
    return NoiseRecord(grid, manifest["dt"], inc, tuple(manifest["seed_info"]))


def save_trajectory(directory, traj: TrajectoryRecord, store_noise: bool = True) -> None:
    """TrajectoryRecord as a directory: manifest, per-step dumps,
    diagnostics CSV (time, enstrophy, energy, transfer residual)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sim, integ = traj.sim, traj.integ
    manifest = {
        "kind": "trajectory",
        "sim": {
            "n": sim.n,
            "alpha": sim.alpha,
            "gamma": sim.gamma,
            "level": sim.level,
            "kappa": sim.kappa,
            "master_seed": sim.master_seed,
        },
        "integ": {
            "dt": integ.dt,
            "horizon": integ.horizon,
            "scheme": integ.scheme,
            "blowup_threshold": integ.blowup_threshold,
        },
        "drift": {"kind": traj.drift.kind, "alpha": traj.drift.alpha, "beta": traj.drift.beta, "s": traj.drift.s},
        "n_times": len(traj.times),
        "complete": traj.complete,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for j in range(len(traj.times)):
        save_field(d / f"state_{j:06d}.tsns", traj.state(j))
    if store_noise and traj.noise is not None:
        save_noise(d / "noise", traj.noise, sim.noise_spec)

    op = drift_operator(traj.drift, sim.level, sim.grid)
    rows = []
    for j in range(len(traj.times)):
        w = traj.states[j]
        l2sq = float(np.sum(np.abs(w) ** 2))
        if sim.level in ("vorticity", "hat"):
            enstrophy = l2sq
            energy = float(np.sum(np.abs(w / sim.grid.kabs_safe) ** 2))
        else:
            energy = l2sq
            enstrophy = float(np.sum(sim.grid.ksq * np.abs(w) ** 2))
        transfer = 0.0
        if op.bilinear is not None:
            drift = op.value(w)
            transfer = float(np.real(np.sum(w * np.conj(drift))))
        rows.append(
            {"time": float(traj.times[j]), "enstrophy": enstrophy, "energy": energy, "transfer_residual": transfer}
        )
    write_csv(d / "diagnostics.csv", rows)


def save_shift_path(path, shift) -> None:
    """Shift path: base header + (s, tau) index + stacked blocks.

    After the 14-byte field header (rank 2, velocity tag):
    u32 n_s_points, u32 n_cells, u32 n_steps, f64 dt, f64[n_s] s grid,
    u32[n_cells] cell start steps, then n_s * n_cells coefficient blocks
    (s-major) in the field payload layout.
    """
    grid = shift.grid
    n_s, n_cells = shift.values.shape[0], shift.values.shape[1]
    idx = _wavenumber_order(grid.n)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.n, 2, LEVEL_TAGS["velocity"]))
        fh.write(struct.pack("<IIId", n_s, n_cells, shift.n_steps, shift.dt))
        fh.write(np.asarray(shift.s_grid, dtype="<f8").tobytes())
        fh.write(np.asarray(shift.cell_starts, dtype="<u4").tobytes())
        for i in range(n_s):
            for c in range(n_cells):
                blk = shift.values[i, c][:, idx][:, :, idx]
                flat = np.empty(blk.size * 2, dtype="<f8")
                flat[0::2] = np.real(blk).ravel()
                flat[1::2] = np.imag(blk).ravel()
                fh.write(flat.tobytes())


def load_shift_path(path):
    from .girsanov import ShiftPath

    buf = Path(path).read_bytes()
    magic, version, n, rank, tag = _HEADER.unpack_from(buf)
    if magic != MAGIC or rank != 2:
        raise ValueError("not a shift-path dump")
    off = _HEADER.size
    n_s, n_cells, n_steps, dt = struct.unpack_from("<IIId", buf, off)
    off += struct.calcsize("<IIId")
    s_grid = np.frombuffer(buf, dtype="<f8", count=n_s, offset=off).copy()
    off += 8 * n_s
    starts = np.frombuffer(buf, dtype="<u4", count=n_cells, offset=off).astype(int)
    off += 4 * n_cells
    grid = TorusGrid(int(n))
    idx = _wavenumber_order(int(n))
    values = np.empty((n_s, n_cells, 2, n, n), dtype=np.complex128)
    block = 2 * n * n * 2
    for i in range(n_s):
        for c in range(n_cells):
            flat = np.frombuffer(buf, dtype="<f8", count=block, offset=off)
            off += block * 8
            blk = (flat[0::2] + 1j * flat[1::2]).reshape(2, n, n)
            tmp = np.empty_like(blk)
            tmp[:, idx] = blk
            out = np.empty_like(blk)
            out[:, :, idx] = tmp
            values[i, c] = out
    return ShiftPath(grid, float(dt), int(n_steps), s_grid, starts, values)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """Deterministic CSV: floats via repr (shortest round-trip form)."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v))
        return v

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: fmt(r.get(k, "")) for k in columns})


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
