"""Scenario files, simulation runs, output artifacts and run comparison.

Scenario documents are INI-style: ``[section]`` headers followed by
``key = value`` lines, ``#`` or ``;`` comments. Every key is optional and
unknown sections or keys are rejected. See ``SCHEMA`` for the full list and
README.md for the documented defaults.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .circuit import (
    CH,
    CHANNELS,
    BranchParams,
    CircuitParams,
    ControllerParams,
    Mode,
    simulate,
)

FLOAT_FMT = "%.17g"
SOURCE_CHANNELS = ("i_s_r_A", "i_s_y_A", "i_s_b_A")
LOAD_CHANNELS = ("i_load_r_A", "i_load_y_A", "i_load_b_A")

# section -> key -> parser
SCHEMA = {
    "circuit": {
        "V_s": float, "f1": float, "L_s": float, "R_s": float, "L_L": float,
        "C_L": float, "R_L": float, "C_dc": float, "L_f": float, "R_f": float,
        "R_on": float, "R_off": float, "dt": float, "max_diode_iters": int,
    },
    "passive": {
        "C_5th": float, "L_5th": float, "R_5th": float,
        "C_7th": float, "L_7th": float, "R_7th": float,
        "C_HP": float, "L_HP": float, "R_HP": float,
    },
    "controller": {
        "v_ref": float, "gain": float, "tau": float, "half_width": float,
        "voltage_sense": str, "v_dc_init": float,
    },
    "run": {
        "mode": str, "t_end": float, "t_settle": float, "output_dir": str,
        "decimation": int,
    },
    "analysis": {"n_cycles": int, "h_max": int, "thd_limit": float},
}

_BRANCH_KEYS = {"5th": "fifth", "7th": "seventh", "HP": "high_pass"}


class ScenarioError(ValueError):
    """Malformed, unknown or inconsistent scenario content."""


class WindowMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    circuit: CircuitParams = field(default_factory=CircuitParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    mode: Mode = Mode.HYBRID
    t_end: float = 0.3
    t_settle: float = 0.1
    n_cycles: int = 10
    h_max: int = analysis.H_MAX
    thd_limit: float = analysis.THD_LIMIT
    output_dir: str = "out"
    decimation: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        window = self.n_cycles / self.circuit.f1
        if self.t_settle < 0 or self.t_end <= 0:
            raise ScenarioError("t_end must be positive and t_settle non-negative")
        if self.t_end < self.t_settle + window - 1e-12:
            raise ScenarioError(
                f"t_end = {self.t_end:g} s is shorter than t_settle + analysis window "
                f"= {self.t_settle + window:g} s"
            )
        if self.n_cycles < 5 or self.h_max < 2 or self.decimation < 1:
            raise ScenarioError("need n_cycles >= 5, h_max >= 2, decimation >= 1")
        if not 0 < self.thd_limit:
            raise ScenarioError("thd_limit must be positive")
        analysis.samples_per_cycle(self.circuit.dt, self.circuit.f1)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.circuit.dt))


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


def load_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError(f"line {exc.lineno}: parse error: no [section] header") from None
    except configparser.ParsingError as exc:
        line, raw = exc.errors[0]
        raise ScenarioError(f"line {line}: parse error at {raw.strip()!r}") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        raise ScenarioError(f"line {line}: parse error: {msg}") from None

    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            line = next((n for n, s in enumerate(text.splitlines(), 1)
                         if s.strip() == f"[{section}]"), None)
            raise ScenarioError(f"line {line}: unknown section [{section}]")
        values[section] = {}
        for key, raw in cp.items(section):
            line = _key_line(text, section, key)
            if key not in SCHEMA[section]:
                raise ScenarioError(f"line {line}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw.strip())
            except ValueError:
                raise ScenarioError(
                    f"line {line}: bad value {raw!r} for {key!r} in [{section}]"
                ) from None

    try:
        return scenario_from_values(values)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


def scenario_from_values(values: dict[str, dict]) -> Scenario:
    circ = dict(values.get("circuit", {}))
    base = CircuitParams()
    for suffix, attr in _BRANCH_KEYS.items():
        pas = values.get("passive", {})
        b = getattr(base, attr)
        circ[attr] = BranchParams(
            C=pas.get(f"C_{suffix}", b.C), L=pas.get(f"L_{suffix}", b.L), R=pas.get(f"R_{suffix}", b.R)
        )
    run = values.get("run", {})
    return Scenario(
        circuit=CircuitParams(**circ),
        controller=ControllerParams(**values.get("controller", {})),
        mode=Mode.parse(run.get("mode", "hybrid")),
        t_end=run.get("t_end", 0.3),
        t_settle=run.get("t_settle", 0.1),
        output_dir=run.get("output_dir", "out"),
        decimation=run.get("decimation", 10),
        **values.get("analysis", {}),
    )


def load_scenario_file(path) -> Scenario:
    return load_scenario(Path(path).read_text())


def dump_scenario(s: Scenario) -> str:
    """Inverse of :func:`load_scenario` (every key written out)."""
    c, k = s.circuit, s.controller
    lines = ["[circuit]"]
    for key in SCHEMA["circuit"]:
        lines.append(f"{key} = {getattr(c, key)!r}")
    lines.append("\n[passive]")
    for suffix, attr in _BRANCH_KEYS.items():
        b = getattr(c, attr)
        lines += [f"C_{suffix} = {b.C!r}", f"L_{suffix} = {b.L!r}", f"R_{suffix} = {b.R!r}"]
    lines.append("\n[controller]")
    for key, val in asdict(k).items():
        if val is not None:
            lines.append(f"{key} = {val!r}" if not isinstance(val, str) else f"{key} = {val}")
    lines += ["\n[run]", f"mode = {s.mode.name.lower()}", f"t_end = {s.t_end!r}",
              f"t_settle = {s.t_settle!r}", f"output_dir = {s.output_dir}",
              f"decimation = {s.decimation}",
              "\n[analysis]", f"n_cycles = {s.n_cycles}", f"h_max = {s.h_max}",
              f"thd_limit = {s.thd_limit!r}"]
    return "\n".join(lines) + "\n"


# ---- summaries ----------------------------------------------------------
@dataclass
class RunSummary:
    mode: str
    f1: float
    dt: float
    t_settle: float
    n_cycles: int
    h_max: int
    thd_r: float
    thd_y: float
    thd_b: float
    thd: float  # worst phase
    thd_load: float  # worst phase, rectifier current
    i1_rms_r: float
    i1_rms_y: float
    i1_rms_b: float
    displacement_pf: float
    v_dc_min: float
    v_dc_mean: float
    v_dc_max: float
    switching_frequency: float  # mean over legs, Hz
    band_containment: float  # fraction of window samples inside band + slew
    kcl_max: float
    thd_limit: float
    ieee519_pass: bool
    source_channels: tuple[str, ...] = SOURCE_CHANNELS
    harmonics: np.ndarray = field(default_factory=lambda: np.zeros(0))  # phase r, peak A

    def to_text(self) -> str:
        lines = ["[summary]"]
        for k, v in asdict(self).items():
            if k == "harmonics":
                continue
            if isinstance(v, bool):
                v = "pass" if v else "fail"
            elif isinstance(v, float):
                v = FLOAT_FMT % v
            elif isinstance(v, tuple):
                v = ",".join(v)
            lines.append(f"{k} = {v}")
        lines.append("\n[harmonics]")
        lines += [f"{h} = {FLOAT_FMT % m}" for h, m in enumerate(self.harmonics)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunSummary":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        s = dict(cp["summary"])
        kw = {}
        for f in cls.__dataclass_fields__.values():
            if f.name == "harmonics":
                continue
            raw = s[f.name]
            if f.name == "ieee519_pass":
                kw[f.name] = raw == "pass"
            elif f.name == "source_channels":
                kw[f.name] = tuple(raw.split(","))
            elif f.name in ("mode",):
                kw[f.name] = raw
            elif f.name in ("n_cycles", "h_max"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        h = cp["harmonics"]
        kw["harmonics"] = np.array([float(h[str(i)]) for i in range(len(h))])
        return cls(**kw)


def load_summary(path) -> RunSummary:
    return RunSummary.from_text(Path(path).read_text())


@dataclass
class RunResult:
    scenario: Scenario
    summary: RunSummary
    log: np.ndarray  # undecimated, row 0 = initial state
    spectra: dict[str, analysis.Spectrum]

    def window(self) -> slice:
        return analysis_window(self.scenario)

    def channel(self, name: str) -> np.ndarray:
        return self.log[:, CH[name]]


def analysis_window(s: Scenario) -> slice:
    spc = analysis.samples_per_cycle(s.circuit.dt, s.circuit.f1)
    n0 = int(round(s.t_settle / s.circuit.dt))
    return slice(n0, n0 + spc * s.n_cycles)


def summarize(s: Scenario, log: np.ndarray) -> tuple[RunSummary, dict[str, analysis.Spectrum]]:
    c = s.circuit
    w = analysis_window(s)
    spectra = {
        ch: analysis.dft_spectrum(log[w, CH[ch]], c.dt, c.f1, s.n_cycles, s.h_max)
        for ch in SOURCE_CHANNELS + LOAD_CHANNELS + ("e_r_V",)
    }
    thds = [spectra[ch].thd for ch in SOURCE_CHANNELS]
    worst = max(thds)
    verdict = analysis.ieee519_verdict(
        max((spectra[ch] for ch in SOURCE_CHANNELS), key=lambda sp: sp.thd), s.thd_limit
    )
    vdc = log[w, CH["v_dc_V"]]
    duration = s.n_cycles / c.f1
    if s.mode == Mode.HYBRID:
        sw = log[w.start - 1 : w.stop, CH["sw_r"] : CH["sw_b"] + 1]
        f_sw = float(np.abs(np.diff(sw, axis=0)).sum() / 3 / 2 / duration)
        err = np.abs(
            log[w, CH["i_filter_r_A"] : CH["i_filter_b_A"] + 1]
            - log[w, CH["i_ref_r_A"] : CH["i_ref_b_A"] + 1]
        )
        bound = s.controller.half_width + c.dt * vdc / c.L_f
        contained = float(np.mean(err <= bound[:, None]))
    else:
        f_sw, contained = 0.0, 1.0
    summary = RunSummary(
        mode=s.mode.name.lower(),
        f1=c.f1,
        dt=c.dt,
        t_settle=s.t_settle,
        n_cycles=s.n_cycles,
        h_max=s.h_max,
        thd_r=thds[0],
        thd_y=thds[1],
        thd_b=thds[2],
        thd=worst,
        thd_load=max(spectra[ch].thd for ch in LOAD_CHANNELS),
        i1_rms_r=spectra["i_s_r_A"].magnitudes[1] / math.sqrt(2),
        i1_rms_y=spectra["i_s_y_A"].magnitudes[1] / math.sqrt(2),
        i1_rms_b=spectra["i_s_b_A"].magnitudes[1] / math.sqrt(2),
        displacement_pf=analysis.displacement_power_factor(spectra["e_r_V"], spectra["i_s_r_A"]),
        v_dc_min=float(vdc.min()),
        v_dc_mean=float(vdc.mean()),
        v_dc_max=float(vdc.max()),
        switching_frequency=f_sw,
        band_containment=contained,
        kcl_max=float(log[1:, CH["kcl_residual_A"]].max()),
        thd_limit=s.thd_limit,
        ieee519_pass=verdict.passed,
        harmonics=spectra["i_s_r_A"].magnitudes.copy(),
    )
    return summary, spectra


def execute(s: Scenario) -> RunResult:
    """Simulate and analyze without touching the filesystem."""
    _, log = simulate(s.circuit, s.controller, s.mode, s.n_steps)
    summary, spectra = summarize(s, log)
    return RunResult(s, summary, log, spectra)


def timeseries_csv(log: np.ndarray, decimation: int) -> str:
    buf = io.StringIO()
    np.savetxt(buf, log[::decimation], fmt=FLOAT_FMT, delimiter=",",
               header=",".join(CHANNELS), comments="")
    return buf.getvalue()


def spectrum_csv(spec: analysis.Spectrum) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h", "frequency_Hz", "magnitude_peak", "phase_rad", "relative_pct"])
    m1 = spec.magnitudes[1]
    for h, (m, ph) in enumerate(zip(spec.magnitudes, spec.phases)):
        rel = 100 * m / m1 if m1 > 0 else float("nan")
        w.writerow([h, FLOAT_FMT % (h * spec.f1), FLOAT_FMT % m, FLOAT_FMT % ph, FLOAT_FMT % rel])
    return buf.getvalue()


def run(s: Scenario, out_dir=None) -> RunResult:
    """Simulate, then write ``timeseries.csv``, ``spectrum_<channel>.csv``
    and ``summary.txt`` into ``out_dir`` (default: the scenario's)."""
    result = execute(s)
    out = Path(out_dir if out_dir is not None else s.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeseries.csv").write_text(timeseries_csv(result.log, s.decimation))
    for ch, spec in result.spectra.items():
        (out / f"spectrum_{ch}.csv").write_text(spectrum_csv(spec))
    (out / "summary.txt").write_text(result.summary.to_text())
    (out / "scenario.ini").write_text(dump_scenario(s))
    return result


# ---- comparison ---------------------------------------------------------
@dataclass(frozen=True)
class Comparison:
    thd_base: float
    thd_comp: float
    reduction_ratio: float
    attenuation_db: np.ndarray  # per harmonic, base relative to comp

    def to_text(self) -> str:
        lines = [
            f"thd_base = {self.thd_base:.6f}",
            f"thd_comp = {self.thd_comp:.6f}",
            f"reduction_ratio = {self.reduction_ratio:.4f}",
            "h  attenuation_dB",
        ]
        lines += [f"{h} {a:.3f}" for h, a in enumerate(self.attenuation_db) if h >= 1]
        return "\n".join(lines) + "\n"


def compare(base: RunSummary, comp: RunSummary) -> Comparison:
    if (base.f1, base.n_cycles, base.h_max) != (comp.f1, comp.n_cycles, comp.h_max):
        raise WindowMismatchError(
            f"analysis windows differ: f1 {base.f1} vs {comp.f1}, cycles "
            f"{base.n_cycles} vs {comp.n_cycles}, h_max {base.h_max} vs {comp.h_max}"
        )
    ratio = base.thd / comp.thd if comp.thd > 0 else math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        att = 20 * np.log10(base.harmonics / comp.harmonics)
    att = np.where(base.harmonics == comp.harmonics, 0.0, att)
    return Comparison(base.thd, comp.thd, ratio, att)


def with_overrides(s: Scenario, mode=None, t_end=None, output_dir=None) -> Scenario:
    kw = {}
    if mode is not None:
        kw["mode"] = Mode.parse(mode)
    if t_end is not None:
        kw["t_end"] = float(t_end)
    if output_dir is not None:
        kw["output_dir"] = str(output_dir)
    try:
        return replace(s, **kw)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
