"""Angle-indexed voltage codebook: GA synthesis, hard-partition baseline, I/O.

An entry steers up to two beams.  The synthesis objective for a key
(theta_t, theta_r, alpha) is the squared magnitude of

    sum_n  sqrt(1-alpha) * c_t_n * exp(-j*phi_t_n)
         + sqrt(alpha)   * c_2_n * exp(-j*phi_r_n)

where c_2 is the reflective coefficient (transflective mode) or a second
transmissive coefficient (dual-transmissive mode), and phi_k_n is the ideal
steering phase toward theta_k.  Single mode drops one term (alpha 0 keeps the
transmissive beam, alpha 1 keeps the reflective one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import CodebookError, DomainError
from .surface import (
    CoupledResonatorModel,
    DEFAULT_ATOM_MODEL,
    MODE_DUAL_TR,
    MODE_DUAL_TT,
    MODE_SINGLE_T,
    SIDE_R,
    SIDE_T,
    STEER_LIMIT_DEG,
    SurfaceConfig,
    SurfaceGeometry,
    VOLTAGE_MAX,
    VOLTAGE_MIN,
    beam_pattern,
    realized_gains,
    steering_phases,
)

KEY_SINGLE = "single"
KEY_MODES = (KEY_SINGLE, MODE_DUAL_TR, MODE_DUAL_TT)
STORED_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)

FORMAT_MAGIC = "surfho-codebook"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CodebookKey:
    """(theta_t, theta_r, alpha, mode); alpha is the reflective power share."""

    theta_t_deg: float
    theta_r_deg: float
    alpha: float
    mode: str = MODE_DUAL_TR

    def __post_init__(self):
        if self.mode not in KEY_MODES:
            raise DomainError(f"unknown codebook mode: {self.mode!r}")
        for a in (self.theta_t_deg, self.theta_r_deg):
            if abs(a) > STEER_LIMIT_DEG:
                raise DomainError(
                    f"steering angle {a} outside +/-{STEER_LIMIT_DEG} degrees")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode == KEY_SINGLE and self.alpha not in (0.0, 1.0):
            raise DomainError(
                f"single mode requires alpha in {{0, 1}}, got {self.alpha}")

    @classmethod
    def single(cls, theta_deg: float, reflective: bool = False) -> "CodebookKey":
        return cls(theta_deg, theta_deg, 1.0 if reflective else 0.0, KEY_SINGLE)

    def sort_tuple(self) -> tuple:
        return (self.mode, self.theta_t_deg, self.theta_r_deg, self.alpha)


@dataclass(frozen=True)
class CodebookEntry:
    """Synthesized configuration with its realized per-beam gains (dB)."""

    key: CodebookKey
    config: SurfaceConfig
    g_w_tra_db: float
    g_w_ref_db: float
    objective: float
    sidelobe_margin_db: float
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class GaSettings:
    """Genetic-algorithm knobs (defaults sized for desk-scale runs)."""

    population: int = 128
    generations: int = 300
    tournament: int = 4
    crossover_p: float = 0.5
    mutation_sigma_v: float = 0.8
    mutation_p: float = 0.05
    elitism: int = 2
    sidelobe_weight: float = 0.0
    voltage_levels: int | None = None  # quantize genes to this many levels

    def __post_init__(self):
        if self.population < 2 or self.elitism >= self.population:
            raise DomainError("population must exceed elitism and be >= 2")
        if self.voltage_levels is not None and self.voltage_levels < 2:
            raise DomainError("voltage_levels must be >= 2")


def term_weights(key: CodebookKey, geometry: SurfaceGeometry,
                 incident_deg: float) -> tuple[np.ndarray, np.ndarray, bool]:
    """Steering phasors with power-split weights folded in.

    Returns (w_a, w_b, second_reflective): the objective is
    |sum(c_t*w_a + c_2*w_b)|^2 with c_2 chosen by the flag.
    """
    w_t = math.sqrt(1.0 - key.alpha)
    w_r = math.sqrt(key.alpha)
    phi_t = steering_phases(geometry, key.theta_t_deg, incident_deg)[0]
    phi_r = steering_phases(geometry, key.theta_r_deg, incident_deg)[0]
    w_a = w_t * np.exp(-1j * phi_t)
    w_b = w_r * np.exp(-1j * phi_r)
    second_reflective = key.mode != MODE_DUAL_TT
    return w_a, w_b, second_reflective


def objective_of(config: SurfaceConfig, key: CodebookKey,
                 geometry: SurfaceGeometry, incident_deg: float = 0.0,
                 model=DEFAULT_ATOM_MODEL) -> float:
    """Eq-style dual-beam objective value of an existing configuration."""
    w_a, w_b, refl = term_weights(key, geometry, incident_deg)
    ct, cr = model.coefficients(config.u_m(), config.u_e(), geometry.carrier_ghz)
    c2 = cr if refl else ct
    return float(np.abs(np.sum(ct * w_a + c2 * w_b)) ** 2)


def _population_objectives(u_m, u_e, w_a, w_b, refl, geometry, model):
    if isinstance(model, CoupledResonatorModel):
        return kernels.ga_objectives(u_m, u_e, w_a, w_b, geometry.carrier_ghz,
                                     model.params.as_tuple(), refl)
    ct, cr = model.coefficients(u_m, u_e, geometry.carrier_ghz)
    c2 = cr if refl else ct
    return np.abs(ct @ w_a + c2 @ w_b) ** 2


def _quantize(v: np.ndarray, levels: int | None) -> np.ndarray:
    if levels is None:
        return v
    step = (VOLTAGE_MAX - VOLTAGE_MIN) / (levels - 1)
    return np.round((v - VOLTAGE_MIN) / step) * step + VOLTAGE_MIN


def _config_mode(key: CodebookKey) -> str:
    return MODE_SINGLE_T if key.mode == KEY_SINGLE else key.mode


def _entry_beams(key: CodebookKey) -> tuple[tuple[str, float], ...]:
    if key.mode == KEY_SINGLE:
        side = SIDE_R if key.alpha == 1.0 else SIDE_T
        return ((side, key.theta_t_deg),)
    if key.mode == MODE_DUAL_TT:
        return ((SIDE_T, key.theta_t_deg), (SIDE_T, key.theta_r_deg))
    return ((SIDE_T, key.theta_t_deg), (SIDE_R, key.theta_r_deg))


def sidelobe_margin(config: SurfaceConfig, key: CodebookKey,
                    geometry: SurfaceGeometry, incident_deg: float = 0.0,
                    model=DEFAULT_ATOM_MODEL) -> float:
    """dB separation between the weaker main lobe and the worst sidelobe."""
    bp = beam_pattern(config, geometry, incident_deg, model=model)
    beams = _entry_beams(key)
    # exclusion half-width around each main lobe, in sin-space (null-to-null)
    halfwidth = 1.5 / (geometry.n_elements * geometry.spacing_wl)
    sin_grid = np.sin(np.radians(bp.angles_deg))
    margins = []
    for side, theta in beams:
        gains = bp.gain_t_db if side == SIDE_T else bp.gain_r_db
        same_side = [b for b in beams if b[0] == side]
        exclude = np.zeros(sin_grid.shape, dtype=bool)
        for _, th in same_side:
            exclude |= np.abs(sin_grid - math.sin(math.radians(th))) < halfwidth
        near = np.abs(sin_grid - math.sin(math.radians(theta))) < halfwidth
        if not near.any() or exclude.all():
            return float("nan")
        peak = float(gains[near].max())
        worst = float(gains[~exclude].max())
        margins.append(peak - worst)
    return float(min(margins))


def _finalize_entry(u_m, u_e, key, geometry, incident_deg, model,
                    objective, history=()) -> CodebookEntry:
    config = SurfaceConfig.from_arrays(u_m, u_e, _config_mode(key))
    g_t, g_r = realized_gains(config, geometry, key.theta_t_deg, key.theta_r_deg,
                              incident_deg, model)
    if key.mode == MODE_DUAL_TT:
        # second beam lives on the transmissive side as well
        bp_val = beam_pattern(config, geometry, incident_deg,
                              grid_deg=[key.theta_r_deg], model=model)
        g_r = float(bp_val.gain_t_db[0])
    margin = sidelobe_margin(config, key, geometry, incident_deg, model)
    return CodebookEntry(key, config, g_t, g_r, float(objective), margin,
                         tuple(history))


def synth_entry(key: CodebookKey, geometry: SurfaceGeometry,
                incident_deg: float = 0.0, seed: int = 0,
                model=DEFAULT_ATOM_MODEL,
                settings: GaSettings = GaSettings()) -> CodebookEntry:
    """Genetic-algorithm soft-partition synthesis of one codebook entry."""
    w_a, w_b, refl = term_weights(key, geometry, incident_deg)
    n = geometry.n_elements
    rng = np.random.default_rng(seed)
    pop = settings.population
    levels = settings.voltage_levels

    u_m = _quantize(rng.uniform(VOLTAGE_MIN, VOLTAGE_MAX, (pop, n)), levels)
    u_e = _quantize(rng.uniform(VOLTAGE_MIN, VOLTAGE_MAX, (pop, n)), levels)

    def fitness(um, ue):
        obj = _population_objectives(um, ue, w_a, w_b, refl, geometry, model)
        if settings.sidelobe_weight:
            pen = np.array([
                -sidelobe_margin(SurfaceConfig.from_arrays(um[i], ue[i],
                                                           _config_mode(key)),
                                 key, geometry, incident_deg, model)
                for i in range(um.shape[0])])
            obj = obj * 10 ** (-settings.sidelobe_weight * pen / 10.0)
        return obj

    obj = fitness(u_m, u_e)
    history = [float(obj.max())]
    n_children = pop - settings.elitism
    for _ in range(settings.generations):
        elite_idx = np.argsort(-obj, kind="stable")[:settings.elitism]
        # tournament selection of parent pairs
        draws = rng.integers(0, pop, size=(2, n_children, settings.tournament))
        winners = np.argmax(obj[draws], axis=2)
        parents = np.take_along_axis(draws, winners[:, :, None], axis=2)[:, :, 0]
        pa, pb = parents[0], parents[1]
        cross_m = rng.random((n_children, n)) < settings.crossover_p
        cross_e = rng.random((n_children, n)) < settings.crossover_p
        child_m = np.where(cross_m, u_m[pb], u_m[pa])
        child_e = np.where(cross_e, u_e[pb], u_e[pa])
        mut_m = rng.random((n_children, n)) < settings.mutation_p
        mut_e = rng.random((n_children, n)) < settings.mutation_p
        child_m = child_m + mut_m * rng.normal(0.0, settings.mutation_sigma_v,
                                               (n_children, n))
        child_e = child_e + mut_e * rng.normal(0.0, settings.mutation_sigma_v,
                                               (n_children, n))
        child_m = _quantize(np.clip(child_m, VOLTAGE_MIN, VOLTAGE_MAX), levels)
        child_e = _quantize(np.clip(child_e, VOLTAGE_MIN, VOLTAGE_MAX), levels)
        u_m = np.vstack([u_m[elite_idx], child_m])
        u_e = np.vstack([u_e[elite_idx], child_e])
        obj = fitness(u_m, u_e)
        history.append(float(obj.max()))

    best = int(np.argmax(obj))
    raw = _population_objectives(u_m[best:best + 1], u_e[best:best + 1],
                                 w_a, w_b, refl, geometry, model)[0]
    return _finalize_entry(u_m[best], u_e[best], key, geometry, incident_deg,
                           model, raw, history)


def synth_hard_partition(key: CodebookKey, geometry: SurfaceGeometry,
                         incident_deg: float = 0.0, model=DEFAULT_ATOM_MODEL,
                         voltage_levels: int | None = None,
                         grid_points: int = 33) -> CodebookEntry:
    """Deterministic baseline: split the aperture, per-partition ideal phases.

    The first floor((1-alpha)*N) elements serve the theta_t beam, the rest the
    second beam; each element picks the grid voltage best aligned with its
    beam's ideal phase.
    """
    if key.mode == KEY_SINGLE:
        raise DomainError("hard partitioning requires a dual-mode key")
    n = geometry.n_elements
    n_first = int(math.floor((1.0 - key.alpha) * n))
    if voltage_levels is not None:
        axis = np.linspace(VOLTAGE_MIN, VOLTAGE_MAX, voltage_levels)
    else:
        axis = np.linspace(VOLTAGE_MIN, VOLTAGE_MAX, grid_points)
    gm, ge = np.meshgrid(axis, axis, indexing="ij")
    ct_g, cr_g = model.coefficients(gm.ravel(), ge.ravel(), geometry.carrier_ghz)
    c2_g = cr_g if key.mode != MODE_DUAL_TT else ct_g
    phi_t = steering_phases(geometry, key.theta_t_deg, incident_deg)[0]
    phi_r = steering_phases(geometry, key.theta_r_deg, incident_deg)[0]
    u_m = np.empty(n)
    u_e = np.empty(n)
    for i in range(n):
        coeffs, phi = (ct_g, phi_t[i]) if i < n_first else (c2_g, phi_r[i])
        score = np.real(coeffs * np.exp(-1j * phi))
        j = int(np.argmax(score))
        u_m[i] = gm.ravel()[j]
        u_e[i] = ge.ravel()[j]
    obj = objective_of(SurfaceConfig.from_arrays(u_m, u_e, _config_mode(key)),
                       key, geometry, incident_deg, model)
    return _finalize_entry(u_m, u_e, key, geometry, incident_deg, model, obj)


def entry_seed(master_seed: int, key: CodebookKey) -> np.random.SeedSequence:
    """Per-key seed stream, stable regardless of synthesis order."""
    ints = (int(master_seed) & 0xFFFFFFFF,
            int(round(key.theta_t_deg * 1000)) & 0xFFFFFFFF,
            int(round(key.theta_r_deg * 1000)) & 0xFFFFFFFF,
            int(round(key.alpha * 1000)) & 0xFFFFFFFF,
            KEY_MODES.index(key.mode))
    return np.random.SeedSequence(ints)


@dataclass
class Codebook:
    """Entries keyed exactly; nearest-key lookup is a separate, explicit step."""

    geometry: SurfaceGeometry
    incident_deg: float = 0.0
    entries: dict[CodebookKey, CodebookEntry] = field(default_factory=dict)

    def add(self, entry: CodebookEntry) -> None:
        if entry.config.n_elements != self.geometry.n_elements:
            raise CodebookError("entry does not match codebook geometry")
        if entry.key.alpha not in STORED_ALPHAS:
            raise CodebookError(
                f"stored entries must use alpha in {STORED_ALPHAS}, "
                f"got {entry.key.alpha}")
        self.entries[entry.key] = entry

    def get(self, key: CodebookKey) -> CodebookEntry:
        try:
            return self.entries[key]
        except KeyError:
            raise CodebookError(f"codebook has no entry for {key}") from None

    def nearest_key(self, theta_t_deg: float, theta_r_deg: float, alpha: float,
                    mode: str) -> CodebookKey:
        """Closest stored key of the same mode; ties prefer smaller |theta_r|
        then smaller alpha."""
        candidates = [k for k in self.entries if k.mode == mode]
        if not candidates:
            raise CodebookError(f"codebook holds no {mode!r} entries")
        return min(candidates, key=lambda k: (
            abs(k.theta_t_deg - theta_t_deg) + abs(k.theta_r_deg - theta_r_deg)
            + 10.0 * abs(k.alpha - alpha),
            abs(k.theta_r_deg), k.alpha, k.sort_tuple()))

    def sorted_entries(self) -> list[CodebookEntry]:
        return [self.entries[k] for k in sorted(self.entries, key=CodebookKey.sort_tuple)]


def build_codebook(theta_t_grid, theta_r_grid, alpha_set,
                   geometry: SurfaceGeometry, seed: int = 0,
                   incident_deg: float = 0.0, mode: str = MODE_DUAL_TR,
                   model=DEFAULT_ATOM_MODEL,
                   settings: GaSettings = GaSettings()) -> Codebook:
    """Synthesize the full key product; per-entry seeds derive from the key."""
    tt = list(theta_t_grid)
    tr = list(theta_r_grid)
    alphas = list(alpha_set)
    if not tt or not tr or not alphas:
        raise DomainError("angle grids and alpha set must be non-empty")
    book = Codebook(geometry, incident_deg)
    keys = sorted((CodebookKey(t, r, a, mode) for t in tt for r in tr
                   for a in alphas), key=CodebookKey.sort_tuple)
    for key in keys:
        try:
            entry = synth_entry(key, geometry, incident_deg,
                                entry_seed(seed, key), model, settings)
        except DomainError as exc:
            raise DomainError(f"synthesis failed for {key}: {exc}") from exc
        book.add(entry)
    return book


class SynthCache:
    """Codebook wrapper that synthesizes missing entries on demand.

    Entry seeds derive from (master seed, key), so the cache returns identical
    entries regardless of query order, and identical to an eager
    build_codebook run with the same master seed.
    """

    def __init__(self, geometry: SurfaceGeometry, seed: int = 0,
                 incident_deg: float = 0.0, model=DEFAULT_ATOM_MODEL,
                 settings: GaSettings = GaSettings(),
                 preloaded: Codebook | None = None):
        self.book = preloaded or Codebook(geometry, incident_deg)
        self.geometry = geometry
        self.incident_deg = incident_deg
        self.model = model
        self.settings = settings
        self.seed = seed
        self.synth_count = 0

    def entry(self, key: CodebookKey) -> CodebookEntry:
        found = self.book.entries.get(key)
        if found is None:
            found = synth_entry(key, self.geometry, self.incident_deg,
                                entry_seed(self.seed, key), self.model,
                                self.settings)
            self.book.add(found)
            self.synth_count += 1
        return found


def _f2h(x: float) -> str:
    return float(x).hex()


def save_codebook(book: Codebook, path) -> None:
    g = book.geometry
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"geometry {g.n_elements} {_f2h(g.spacing_wl)} {_f2h(g.carrier_ghz)} "
        f"{g.fingerprint()}",
        f"incident {_f2h(book.incident_deg)}",
        f"entries {len(book.entries)}",
    ]
    for e in book.sorted_entries():
        k = e.key
        lines.append(
            f"entry {k.mode} {_f2h(k.theta_t_deg)} {_f2h(k.theta_r_deg)} "
            f"{_f2h(k.alpha)} {_f2h(e.g_w_tra_db)} {_f2h(e.g_w_ref_db)} "
            f"{_f2h(e.objective)} {_f2h(e.sidelobe_margin_db)}")
        for um, ue in e.config.voltages:
            lines.append(f"v {_f2h(um)} {_f2h(ue)}")
    lines.append("end")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.idx = 0
        self.offset = 0

    def next(self, what: str) -> str:
        while self.idx < len(self.lines):
            line = self.lines[self.idx]
            start = self.offset
            self.idx += 1
            self.offset += len(line.encode()) + 1
            if line.strip():
                self._last_start = start
                return line
        raise CodebookError(
            f"unexpected end of file at byte {self.offset} while reading {what}")

    def fail(self, msg: str):
        raise CodebookError(f"{msg} at byte {self._last_start}")


def load_codebook(path, expect_geometry: SurfaceGeometry | None = None) -> Codebook:
    with open(path, "r", encoding="ascii") as fh:
        rd = _LineReader(fh.read())
    head = rd.next("header").split()
    if head[:1] != [FORMAT_MAGIC] or len(head) != 2 or head[1] != str(FORMAT_VERSION):
        rd.fail(f"not a {FORMAT_MAGIC} v{FORMAT_VERSION} file")
    try:
        tok = rd.next("geometry").split()
        if tok[0] != "geometry" or len(tok) != 5:
            rd.fail("malformed geometry line")
        geometry = SurfaceGeometry(int(tok[1]), float.fromhex(tok[2]),
                                   float.fromhex(tok[3]))
        if geometry.fingerprint() != tok[4]:
            rd.fail(f"geometry fingerprint mismatch (stored {tok[4]}, "
                    f"computed {geometry.fingerprint()})")
        tok = rd.next("incident angle").split()
        if tok[0] != "incident" or len(tok) != 2:
            rd.fail("malformed incident line")
        incident = float.fromhex(tok[1])
        tok = rd.next("entry count").split()
        if tok[0] != "entries" or len(tok) != 2:
            rd.fail("malformed entries line")
        count = int(tok[1])
        book = Codebook(geometry, incident)
        for _ in range(count):
            tok = rd.next("entry header").split()
            if tok[0] != "entry" or len(tok) != 9:
                rd.fail("malformed entry line")
            key = CodebookKey(float.fromhex(tok[2]), float.fromhex(tok[3]),
                              float.fromhex(tok[4]), tok[1])
            volts = []
            for _ in range(geometry.n_elements):
                vt = rd.next("voltage row").split()
                if vt[0] != "v" or len(vt) != 3:
                    rd.fail("malformed voltage row")
                volts.append((float.fromhex(vt[1]), float.fromhex(vt[2])))
            config = SurfaceConfig(tuple(volts), _config_mode(key))
            book.entries[key] = CodebookEntry(
                key, config, float.fromhex(tok[5]), float.fromhex(tok[6]),
                float.fromhex(tok[7]), float.fromhex(tok[8]))
        if rd.next("end marker").strip() != "end":
            rd.fail("missing end marker")
    except (ValueError, IndexError):
        rd.fail("unparseable field")
    if expect_geometry is not None and expect_geometry != geometry:
        raise CodebookError(
            f"codebook geometry fingerprint {geometry.fingerprint()} does not "
            f"match expected {expect_geometry.fingerprint()}")
    return book


def export_entries(book: Codebook, path) -> None:
    """Human-readable per-entry table (key, gains, voltages)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("mode,theta_t_deg,theta_r_deg,alpha,g_w_tra_db,g_w_ref_db,"
                 "objective,sidelobe_margin_db,voltages\n")
        for e in book.sorted_entries():
            k = e.key
            volts = ";".join(f"{um:.3f}/{ue:.3f}" for um, ue in e.config.voltages)
            fh.write(f"{k.mode},{k.theta_t_deg!r},{k.theta_r_deg!r},{k.alpha!r},"
                     f"{e.g_w_tra_db!r},{e.g_w_ref_db!r},{e.objective!r},"
                     f"{e.sidelobe_margin_db!r},{volts}\n")
