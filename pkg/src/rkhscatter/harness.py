"""Config-driven experiment pipeline: phantom, forward, noise, fit, invert, metrics.

Three modes are supported:

``layer``
    one 2-D cross-section of the phantom (``layer`` selects it);
``layered``
    every one of ``n_layers`` cross-sections, reconstructed independently
    and stacked into a volume;
``volume``
    the direct 3-D problem with a kernel on R^6.

Every run directory holds array files, metrics, per-slice graymaps and a
``manifest.ini`` that is a valid config for re-running the experiment.
"""

import hashlib
import math
import os
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from . import __version__
from .exceptions import ConfigError, ExtrapolationWarning, InvalidArgumentError, StageError
from .forward import ScatteringData, add_noise, born_amplitude, full_wave_amplitude
from .inversion import (RKHSReconstructor, ReconstructedField, assemble_slices,
                        baseline_linear_inversion, hull_mask, predict_amplitudes, reconstruct)
from .io import encode_pgm, read_array, read_config, read_config_text, write_array, write_metrics
from .rkhs import RepresenterModel, SobolevKernelSpec, surrogate_eval
from .scene import (SAMPLE_BOX, DetectorSet, SourceSet, SusceptibilityField, centered_subgrid,
                    gaussian_bump, l_shape_detectors, layer_heights, make_grid,
                    place_sources_lattice, place_sources_random, three_ball_layer,
                    three_ball_phantom, zero_field)
from ._validation import KH_LIMIT, check_kh

MODES = ("layer", "layered", "volume")
PHANTOMS = ("three-ball", "bump", "zero")
ENGINES = ("born", "full-wave")
LAMBDA_RULES = ("default", "gcv", "discrepancy")


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_shape(text):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _parse_optional_shape(text):
    return None if str(text).strip().lower() in ("auto", "none", "") else _parse_shape(text)


def _parse_optional_float(text):
    return None if str(text).strip().lower() in ("auto", "none", "") else float(text)


def _parse_optional_int(text):
    return None if str(text).strip().lower() in ("auto", "none", "") else int(text)


def _parse_lambda(text):
    low = str(text).strip().lower()
    return low if low in LAMBDA_RULES else float(text)


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# field name -> (section, key, parser, help)
_KEYS = {
    "mode": ("experiment", "mode", str, "layer | layered | volume"),
    "phantom": ("experiment", "phantom", str, "three-ball | bump | zero"),
    "engine": ("experiment", "engine", str, "born | full-wave"),
    "seed": ("experiment", "seed", int, "source placement seed"),
    "strict": ("experiment", "strict", _parse_bool, "reject k*h >= 0.1"),
    "scale": ("phantom", "scale", _parse_optional_float, "three-ball scale (auto fits the grid)"),
    "bump_width": ("phantom", "bump_width", float, "Gaussian bump width"),
    "bump_amplitude": ("phantom", "bump_amplitude", float, "Gaussian bump peak"),
    "n_layers": ("phantom", "n_layers", int, "number of cross-sections"),
    "layer": ("phantom", "layer", int, "cross-section used in layer mode"),
    "forward_shape": ("grid", "forward_shape", _parse_optional_shape, "forward grid cells per axis"),
    "forward_spacing": ("grid", "forward_spacing", float, "forward cell size h"),
    "recon_shape": ("grid", "recon_shape", _parse_optional_shape, "reconstruction cells per axis"),
    "k": ("scatter", "k", float, "wavenumber"),
    "n_sources": ("scatter", "n_sources", int, "number of internal sources"),
    "n_detectors": ("scatter", "n_detectors", int, "number of detector directions"),
    "source_layout": ("scatter", "source_layout", str, "random | lattice"),
    "noise_level": ("noise", "level", float, "relative noise level"),
    "noise_seed": ("noise", "seed", int, "noise seed"),
    "noise_side": ("noise", "side", _parse_optional_float, "position-noise length (auto: box side)"),
    "fit_positions": ("noise", "fit_positions", str, "perturbed | true"),
    "lam": ("fit", "lambda", _parse_lambda, "default | gcv | discrepancy | value"),
    "tau": ("fit", "tau", float, "discrepancy safety factor"),
    "truncation": ("fit", "truncation", float, "kernel frequency cut-off"),
    "nodes": ("fit", "nodes", _parse_optional_int, "quadrature nodes per axis / points"),
    "scheme": ("fit", "scheme", str, "gauss-legendre | sobol"),
    "qmc_seed": ("fit", "qmc_seed", int, "Sobol scrambling seed"),
    "rcond": ("fit", "rcond", _parse_optional_float, "generalized-inverse cut-off"),
    "blocks": ("fit", "blocks", str, "single | all"),
    "baseline": ("fit", "baseline", _parse_bool, "also run the linear baseline"),
    "baseline_rcond": ("fit", "baseline_rcond", float, "baseline SVD cut-off"),
    "dedupe": ("layers", "dedupe", _parse_bool, "reuse reconstructions of identical layers"),
    "images": ("output", "images", _parse_bool, "write per-slice graymaps"),
    "occupancy_threshold": ("output", "occupancy_threshold", float, "occupancy export threshold"),
}

SCHEMA = {}
for _name, (_sec, _key, _p, _h) in _KEYS.items():
    SCHEMA.setdefault(_sec, set()).add(_key)


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of one experiment; defaults reproduce the full-scale setup."""

    mode: str = "layered"
    phantom: str = "three-ball"
    engine: str = "born"
    seed: int = 0
    strict: bool = False
    scale: Optional[float] = None
    bump_width: float = 10.0
    bump_amplitude: float = 1.0
    n_layers: int = 17
    layer: int = 8
    forward_shape: Optional[Tuple[int, ...]] = None
    forward_spacing: float = 2.0
    recon_shape: Optional[Tuple[int, ...]] = None
    k: float = 2.0 * math.pi / 500.0
    n_sources: int = 150
    n_detectors: int = 7
    source_layout: str = "random"
    noise_level: float = 0.01
    noise_seed: int = 1
    noise_side: Optional[float] = None
    fit_positions: str = "perturbed"
    lam: object = "default"
    tau: float = 1.0
    truncation: float = 8.0
    nodes: Optional[int] = None
    scheme: str = "gauss-legendre"
    qmc_seed: int = 0
    rcond: Optional[float] = None
    blocks: str = "single"
    baseline: bool = False
    baseline_rcond: float = 1e-3
    dedupe: bool = False
    images: bool = True
    occupancy_threshold: float = 0.085

    @property
    def dim(self):
        return 3 if self.mode == "volume" else 2

    @property
    def forward_cells(self):
        """Forward grid shape; ``auto`` means 35 x 35 (x 20 in volume mode)."""
        if self.forward_shape is not None:
            return tuple(self.forward_shape)
        return (35, 35, 20) if self.mode == "volume" else (35, 35)

    @property
    def recon_cells(self):
        """Reconstruction grid shape; ``auto`` means 31 x 31 (x 16 in volume mode)."""
        if self.recon_shape is not None:
            return tuple(self.recon_shape)
        return (31, 31, 16) if self.mode == "volume" else (31, 31)

    def validate(self):
        """Raise :class:`ConfigError` on inconsistent settings; warn on large k*h."""
        choices = {"mode": MODES, "phantom": PHANTOMS, "engine": ENGINES,
                   "source_layout": ("random", "lattice"), "blocks": ("single", "all"),
                   "fit_positions": ("perturbed", "true"),
                   "scheme": ("gauss-legendre", "sobol")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        d = self.dim
        fwd, rec = self.forward_cells, self.recon_cells
        if len(fwd) != d or len(rec) != d:
            raise ConfigError(f"{self.mode} mode needs {d}-D forward and reconstruction shapes")
        if min(fwd) < 1 or min(rec) < 1:
            raise ConfigError("grid shapes must be positive")
        if any(r > f for r, f in zip(rec, fwd)):
            raise ConfigError("reconstruction grid must fit inside the forward grid")
        for name in ("forward_spacing", "k", "bump_width", "truncation"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n_sources", "n_detectors", "n_layers"):
            if getattr(self, name) < (2 if name == "n_detectors" else 1):
                raise ConfigError(f"{name} too small")
        if not 0 <= self.layer < self.n_layers:
            raise ConfigError(f"layer {self.layer} outside 0..{self.n_layers - 1}")
        if self.noise_level < 0:
            raise ConfigError("noise level must be >= 0")
        if isinstance(self.lam, float) and self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if isinstance(self.lam, str) and self.lam not in LAMBDA_RULES:
            raise ConfigError(f"unknown lambda rule {self.lam!r}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError("scale must be positive")
        if self.source_layout == "lattice":
            per_axis = round(self.n_sources ** (1.0 / d))
            if per_axis ** d != self.n_sources:
                raise ConfigError(f"lattice layout needs n_sources = m^{d}")
        if self.strict and self.k * self.forward_spacing >= KH_LIMIT:
            raise ConfigError(f"k*h = {self.k * self.forward_spacing:.4g} >= {KH_LIMIT} in strict mode")
        return self

    def to_sections(self):
        out = {}
        for name, (sec, key, _, _) in _KEYS.items():
            out.setdefault(sec, {})[key] = _format(getattr(self, name))
        return out

    def to_text(self):
        lines = []
        for sec, items in self.to_sections().items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in items.items())
            lines.append("")
        return "\n".join(lines)


def config_from_sections(sections, base=None):
    """Apply raw ``{section: {key: text}}`` values on top of ``base``."""
    base = ExperimentConfig() if base is None else base
    lookup = {(sec, key): name for name, (sec, key, _, _) in _KEYS.items()}
    updates = {}
    for sec, items in sections.items():
        if sec == "manifest":
            continue
        for key, text in items.items():
            name = lookup.get((sec, key))
            if name is None:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                updates[name] = _KEYS[name][2](text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {text!r} ({exc})") from exc
    return replace(base, **updates)


def _manifest_schema():
    return dict(SCHEMA, manifest=None)


def load_config(path, base=None):
    """Read a config (or a run manifest) from ``path``."""
    return config_from_sections(read_config(path, _manifest_schema()), base).validate()


def parse_config(text, base=None):
    return config_from_sections(read_config_text(text, _manifest_schema()), base).validate()


def field_names():
    """Config field names with their (section, key, help)."""
    return {name: (sec, key, hlp) for name, (sec, key, _, hlp) in _KEYS.items()}


# ---------------------------------------------------------------- geometry

def forward_grid(cfg):
    return make_grid(cfg.dim, cfg.forward_cells, cfg.forward_spacing)


def recon_grid(cfg):
    return centered_subgrid(forward_grid(cfg), cfg.recon_cells)


def phantom_scale(cfg):
    """Three-ball scale: configured, or the largest that fits the grid."""
    if cfg.scale is not None:
        return cfg.scale
    grid = forward_grid(cfg)
    axes = range(cfg.dim)
    return float(min(grid.extent[a] / SAMPLE_BOX[a] for a in axes))


def layer_z(cfg):
    """Heights of the reconstructed cross-sections (empty in volume mode)."""
    if cfg.mode == "volume":
        return np.array([])
    z = layer_heights(cfg.n_layers, SAMPLE_BOX[2] * phantom_scale(cfg))
    return z[[cfg.layer]] if cfg.mode == "layer" else z


def build_phantoms(cfg):
    """One field per layer (2-D modes) or a single 3-D field."""
    grid = forward_grid(cfg)
    if cfg.mode == "volume":
        if cfg.phantom == "three-ball":
            return [three_ball_phantom(grid, phantom_scale(cfg))]
        if cfg.phantom == "bump":
            return [gaussian_bump(grid, cfg.bump_width, cfg.bump_amplitude)]
        return [zero_field(grid)]
    out = []
    for z in layer_z(cfg):
        if cfg.phantom == "three-ball":
            out.append(three_ball_layer(grid, z, phantom_scale(cfg)))
        elif cfg.phantom == "bump":
            out.append(gaussian_bump(grid, cfg.bump_width, cfg.bump_amplitude))
        else:
            out.append(zero_field(grid))
    return out


def build_geometry(cfg):
    grid = forward_grid(cfg)
    if cfg.source_layout == "lattice":
        m = round(cfg.n_sources ** (1.0 / cfg.dim))
        sources = place_sources_lattice(grid, (m,) * cfg.dim)
    else:
        sources = place_sources_random(grid, cfg.n_sources, cfg.seed)
    return sources, l_shape_detectors(cfg.dim, cfg.n_detectors)


def kernel_spec(cfg):
    return SobolevKernelSpec(2 * cfg.dim, scheme=cfg.scheme, truncation=cfg.truncation,
                             nodes=cfg.nodes, seed=cfg.qmc_seed)


def estimator(cfg):
    """The configured :class:`RKHSReconstructor` (unfitted)."""
    lam = None if cfg.lam == "default" else cfg.lam
    return RKHSReconstructor(cfg.k, truncation=cfg.truncation, nodes=cfg.nodes,
                             scheme=cfg.scheme, seed=cfg.qmc_seed, alpha=lam,
                             rcond=cfg.rcond, blocks=cfg.blocks,
                             noise_level=cfg.noise_level, tau=cfg.tau)


# ---------------------------------------------------------------- stages

@dataclass
class RunState:
    """Intermediate products of a run, filled stage by stage."""

    cfg: ExperimentConfig
    phantoms: Optional[list] = None
    sources: Optional[SourceSet] = None
    detectors: Optional[DetectorSet] = None
    clean: Optional[list] = None
    data: Optional[list] = None
    fit_sources: Optional[SourceSet] = None
    models: Optional[list] = None
    recon: Optional[ReconstructedField] = None
    layers: Optional[list] = None
    dedupe_hits: int = 0
    metrics: Optional[dict] = None


def stage_phantom(state):
    cfg = state.cfg
    state.phantoms = build_phantoms(cfg)
    state.sources, state.detectors = build_geometry(cfg)
    return state


def stage_forward(state):
    cfg = state.cfg
    check_kh(cfg.k, cfg.forward_spacing, cfg.strict)
    engine = born_amplitude if cfg.engine == "born" else full_wave_amplitude
    state.clean = [engine(ph, state.sources, state.detectors, cfg.k, cfg.strict)
                   for ph in state.phantoms]
    noisy, fit_sources = [], state.sources
    for d in state.clean:
        nd, perturbed = add_noise(d, state.sources, cfg.noise_level, cfg.noise_seed,
                                  cfg.noise_side)
        noisy.append(nd)
        fit_sources = perturbed
    if cfg.fit_positions == "true":
        fit_sources = state.sources
        noisy = [replace(d, sources=state.sources) for d in noisy]
    state.data = noisy
    state.fit_sources = fit_sources
    return state


def _layer_key(data):
    h = hashlib.sha256()
    for arr in (data.amplitudes, data.sources.positions, data.sources.amplitudes,
                data.detectors.directions):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def stage_fit(state):
    cfg = state.cfg
    models, seen = [], {}
    state.dedupe_hits = 0
    for d in state.data:
        key = _layer_key(d) if cfg.dedupe else None
        if key is not None and key in seen:
            models.append(seen[key])
            state.dedupe_hits += 1
            continue
        model = estimator(cfg).fit_data(d).model_
        models.append(model)
        if key is not None:
            seen[key] = model
    state.models = models
    return state


def stage_invert(state):
    cfg = state.cfg
    grid = recon_grid(cfg)
    layers, seen = [], {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        for model in state.models:
            if id(model) in seen:
                layers.append(seen[id(model)])
                continue
            rec = reconstruct(model, grid, state.detectors, cfg.k, cfg.dim, cfg.blocks)
            seen[id(model)] = rec
            layers.append(rec)
    state.layers = layers
    if cfg.mode == "volume":
        state.recon = layers[0]
    else:
        state.recon = assemble_slices(layers, layer_z(cfg))
    return state


def truth_on_recon(state):
    """True susceptibility sampled at the reconstruction cells, recon-grid shaped."""
    cfg = state.cfg
    grid = recon_grid(cfg)
    if cfg.mode == "volume":
        return state.phantoms[0].sample(grid.centers()).reshape(grid.shape)
    cols = [ph.sample(grid.centers()).reshape(grid.shape) for ph in state.phantoms]
    return np.stack(cols, axis=-1)


def stage_metrics(state):
    cfg = state.cfg
    out = {"mode": cfg.mode, "n_layers": len(state.data),
           "n_data": int(state.data[0].n)}
    num = den = 0.0
    for d, model in zip(state.data, state.models):
        rec = surrogate_eval(model, d.design())
        num += float(np.sum(np.abs(d.target() - rec) ** 2))
        den += float(np.sum(np.abs(d.target()) ** 2))
    out["chi2"] = num / den if den > 0 else "undefined"
    truth = truth_on_recon(state)
    vals = state.recon.values
    out["delta"] = float(np.mean(np.abs(truth - vals)))
    out["imag_max"] = state.recon.imag_max
    lams = [m.lam for m in state.models]
    out["lambda_min"] = float(min(lams))
    out["lambda_max"] = float(max(lams))
    inside = np.concatenate([np.ravel(lay.inside_hull) for lay in state.layers])
    out["cells_outside_hull"] = int(np.sum(~inside))
    out["dedupe_hits"] = state.dedupe_hits
    if cfg.baseline:
        out.update(_baseline_metrics(state))
    return out


def _baseline_metrics(state):
    cfg = state.cfg
    grid = forward_grid(cfg)
    rgrid = recon_grid(cfg)
    num = den = 0.0
    errs = []
    for d, ph in zip(state.data, state.phantoms):
        try:
            base = baseline_linear_inversion(d, grid, cfg.k, cfg.baseline_rcond)
        except InvalidArgumentError as exc:
            return {"baseline": f"skipped ({exc})"}
        a = predict_amplitudes(base, d, cfg.k)
        num += float(np.sum(np.abs(d.amplitudes - a) ** 2))
        den += float(np.sum(np.abs(d.amplitudes) ** 2))
        pts = rgrid.centers()
        errs.append(np.abs(ph.sample(pts) - base.values.ravel()[grid.flat_index(pts)]))
    return {"chi2_baseline": num / den if den > 0 else "undefined",
            "delta_baseline": float(np.mean(np.concatenate(errs)))}


# ---------------------------------------------------------------- files

FILES = ("phantom.scat", "sources.scat", "sources_fit.scat", "detectors.scat",
         "data_clean.scat", "data.scat", "model_coefficients.scat", "model_lambda.scat",
         "recon.scat", "occupancy.scat", "metrics.txt")


def _stack(items):
    """Stack per-layer arrays; a single layer is stored unstacked."""
    return np.asarray(items[0]) if len(items) == 1 else np.stack(items)


def write_phantom(state, out):
    write_array(os.path.join(out, "phantom.scat"), _stack([ph.values for ph in state.phantoms]))
    write_array(os.path.join(out, "sources.scat"), state.sources.positions)
    write_array(os.path.join(out, "detectors.scat"), state.detectors.directions)


def read_phantom(state, out):
    cfg = state.cfg
    grid = forward_grid(cfg)
    arr = read_array(os.path.join(out, "phantom.scat"))
    n = 1 if cfg.mode in ("volume", "layer") else cfg.n_layers
    items = [arr] if n == 1 else list(arr)
    state.phantoms = [SusceptibilityField(grid, v) for v in items]
    state.sources = SourceSet(read_array(os.path.join(out, "sources.scat")))
    state.detectors = DetectorSet(read_array(os.path.join(out, "detectors.scat")))
    return state


def write_data(state, out):
    write_array(os.path.join(out, "data_clean.scat"), _stack([d.amplitudes for d in state.clean]))
    write_array(os.path.join(out, "data.scat"), _stack([d.amplitudes for d in state.data]))
    write_array(os.path.join(out, "sources_fit.scat"), state.fit_sources.positions)


def read_data(state, out):
    cfg = state.cfg
    grid = forward_grid(cfg)
    n = len(state.phantoms)
    fit_sources = SourceSet(read_array(os.path.join(out, "sources_fit.scat")))
    amps = read_array(os.path.join(out, "data.scat"))
    clean = read_array(os.path.join(out, "data_clean.scat"))
    amps = [amps] if n == 1 else list(amps)
    clean = [clean] if n == 1 else list(clean)
    state.fit_sources = fit_sources
    state.data = [ScatteringData(a, fit_sources, state.detectors, cfg.k, grid) for a in amps]
    state.clean = [ScatteringData(a, state.sources, state.detectors, cfg.k, grid) for a in clean]
    return state


def write_model(state, out):
    write_array(os.path.join(out, "model_coefficients.scat"),
                _stack([m.coefficients for m in state.models]))
    write_array(os.path.join(out, "model_lambda.scat"),
                np.array([m.lam for m in state.models]))


def read_model(state, out):
    cfg = state.cfg
    grid = forward_grid(cfg)
    coefs = read_array(os.path.join(out, "model_coefficients.scat"))
    lams = read_array(os.path.join(out, "model_lambda.scat"))
    n = len(state.data)
    coefs = [coefs] if n == 1 else list(coefs)
    spec = kernel_spec(cfg)
    offset = np.concatenate([grid.lower, np.zeros(cfg.dim)])
    models, seen = [], {}
    for d, c, lam in zip(state.data, coefs, lams):
        # identical layers share one model object so inversion dedupes too
        key = (_layer_key(d), c.tobytes()) if cfg.dedupe else None
        if key is not None and key in seen:
            models.append(seen[key])
            continue
        m = RepresenterModel(spec, d.design(), c, float(lam), None, offset, grid.side)
        models.append(m)
        if key is not None:
            seen[key] = m
    state.models = models
    return state


def write_recon(state, out):
    cfg = state.cfg
    rec = state.recon
    write_array(os.path.join(out, "recon.scat"), rec.values_complex)
    occ = (rec.values >= cfg.occupancy_threshold).astype(float)
    write_array(os.path.join(out, "occupancy.scat"), occ)
    if cfg.images:
        lo, hi = float(rec.values.min()), float(rec.values.max())
        for i in range(rec.values.shape[-1] if rec.grid.dim == 3 else 1):
            render_slice(rec, i, (lo, hi), os.path.join(out, f"slice_{i:03d}.pgm"))


def read_recon(state, out):
    cfg = state.cfg
    vals = read_array(os.path.join(out, "recon.scat"))
    grid = recon_grid(cfg)
    # hull flags are cheap to recompute, so they are not stored
    inside = hull_mask(state.fit_sources.positions, grid.centers())
    if cfg.mode == "volume":
        state.recon = ReconstructedField(grid, vals, inside_hull=inside)
        state.layers = [state.recon]
    else:
        layers = [ReconstructedField(grid, vals[..., i], inside_hull=inside)
                  for i in range(vals.shape[-1])]
        state.layers = layers
        state.recon = assemble_slices(layers, layer_z(cfg))
    return state


def render_slice(field_, layer, value_range=None, path=None):
    """Write one slice of a reconstruction as an 8-bit graymap.

    3-D fields are sliced along the last axis. The image has the first
    grid axis running left to right and the second bottom to top. Returns
    the encoded bytes (and writes them when ``path`` is given).
    """
    vals = field_.values if isinstance(field_, ReconstructedField) else np.asarray(field_).real
    if vals.ndim == 3:
        if not 0 <= layer < vals.shape[-1]:
            raise InvalidArgumentError(f"layer {layer} outside 0..{vals.shape[-1] - 1}")
        vals = vals[..., layer]
    elif vals.ndim == 2:
        if layer != 0:
            raise InvalidArgumentError("a 2-D field has only layer 0")
    else:
        raise InvalidArgumentError("render needs a 2-D or 3-D field")
    lo, hi = (None, None) if value_range is None else value_range
    img = vals.T[::-1]
    buf = encode_pgm(img, lo, hi)
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(buf)
    return buf


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(cfg, out, status="complete"):
    """Config plus version, status and a SHA-256 for every output file."""
    lines = [cfg.to_text(), "[manifest]", f"version = {__version__}", f"status = {status}"]
    for name in sorted(os.listdir(out)):
        if name == "manifest.ini" or not os.path.isfile(os.path.join(out, name)):
            continue
        lines.append(f"sha256.{name} = {_sha256(os.path.join(out, name))}")
    path = os.path.join(out, "manifest.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- drivers

STAGES = ("phantom", "forward", "fit", "invert", "metrics")


@dataclass
class RunReport:
    output: str
    metrics: dict
    files: tuple
    state: RunState


def _run_stage(name, func, *args):
    try:
        return func(*args)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # stage-tagged re-raise
        raise StageError(name, exc) from exc


def run_stages(cfg, output, stages=STAGES):
    """Run a contiguous subset of stages, loading earlier products from ``output``.

    Returns the :class:`RunState`. Missing inputs raise :class:`StageError`.
    """
    cfg.validate()
    os.makedirs(output, exist_ok=True)
    state = RunState(cfg)
    first = STAGES.index(stages[0])
    loaders = [read_phantom, read_data, read_model, read_recon]
    for i in range(first):
        if i < len(loaders):
            _run_stage(STAGES[i], loaders[i], state, output)
    for name in stages:
        try:
            _do_stage(name, state, output)
        except StageError:
            write_metrics(os.path.join(output, "metrics.txt"),
                          {"status": "failed", "stage": name})
            write_manifest(cfg, output, status=f"failed:{name}")
            raise
    return state


def _do_stage(name, state, out):
    if name == "phantom":
        _run_stage(name, stage_phantom, state)
        _run_stage(name, write_phantom, state, out)
    elif name == "forward":
        _run_stage(name, stage_forward, state)
        _run_stage(name, write_data, state, out)
    elif name == "fit":
        _run_stage(name, stage_fit, state)
        _run_stage(name, write_model, state, out)
    elif name == "invert":
        _run_stage(name, stage_invert, state)
        _run_stage(name, write_recon, state, out)
    elif name == "metrics":
        metrics = _run_stage(name, stage_metrics, state)
        metrics = dict(status="complete", **metrics)
        write_metrics(os.path.join(out, "metrics.txt"), metrics)
        state.metrics = metrics
        write_manifest(state.cfg, out)
    else:
        raise ConfigError(f"unknown stage {name!r}")


def run_pipeline(cfg, output):
    """Run every stage; returns a :class:`RunReport`."""
    state = run_stages(cfg, output, STAGES)
    files = tuple(sorted(f for f in os.listdir(output)
                         if os.path.isfile(os.path.join(output, f))))
    return RunReport(output, state.metrics, files, state)


def rerun_from_manifest(manifest_path, output):
    return run_pipeline(load_config(manifest_path), output)


SWEEP_AXES = {"sources": "n_sources", "detectors": "n_detectors", "lambda": "lam"}


def sweep(cfg, axis, values, output):
    """One pipeline run per value of ``axis``; returns rows ``(value, chi2, delta)``.

    Runs go to ``output/<axis>_<i>``; the table is written to ``sweep.txt``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {tuple(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    name = SWEEP_AXES[axis]
    rows = []
    os.makedirs(output, exist_ok=True)
    for i, v in enumerate(values):
        try:
            v = _parse_lambda(v) if axis == "lambda" else int(v)
        except ValueError as exc:
            raise ConfigError(f"bad sweep value {v!r}") from exc
        if not isinstance(v, str) and not (v > 0 or (axis == "lambda" and v == 0)):
            raise ConfigError(f"sweep values must be positive, got {v}")
        run_cfg = replace(cfg, **{name: v}).validate()
        rep = run_pipeline(run_cfg, os.path.join(output, f"{axis}_{i:02d}"))
        rows.append((v, rep.metrics["chi2"], rep.metrics["delta"]))
    with open(os.path.join(output, "sweep.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"# axis={axis}\n")
        fh.write("value chi2 delta\n")
        for v, c, d in rows:
            fh.write(f"{v!r} {c!r} {d!r}\n")
    return rows
