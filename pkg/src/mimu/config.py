"""Campaign configuration files.

A configuration is a YAML document restricted to plain maps, sequences and scalars.
Anchors, aliases and explicit tags are rejected. Every key is checked against the
schema below and errors name the offending key path, e.g. ``imus[1].extrinsic.pos_m``.

Example::

    seed: 7
    duration_s: 60
    runs: 100
    mode: multi_update
    imus:
      - preset: VN300
        rate_hz: 200
      - preset: VN100
        rate_hz: 100
        extrinsic: {pos_m: [0.1, -0.05, 0.03], rotvec_rad: [0.05, -0.1, 0.2]}
    camera:
      rate_hz: 20
      landmarks: {nx: 10, ny: 10, spacing_m: 0.5, offset_m: 5.0}
    output_dir: out
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .camera import CameraModel
from .sim import MODES, CameraSpec, ImuSpec, InitErrorStd, SimConfig, default_imus
from .state import NoiseParams, preset_noise
from .trajectory import TrajectoryBounds


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the key path."""

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path or '<root>'}: {reason}")


@dataclass
class ConfigFile:
    sim: SimConfig
    runs: int = 1
    output_dir: str = "mimu_out"
    source: str | None = field(default=None, repr=False)


# --------------------------------------------------------------------------- YAML subset


def _check_events(text):
    for ev in yaml.parse(text, Loader=yaml.SafeLoader):
        where = f"line {ev.start_mark.line + 1}" if ev.start_mark else "document"
        if isinstance(ev, yaml.AliasEvent):
            raise ConfigError("", f"aliases are not supported ({where})")
        if getattr(ev, "anchor", None) is not None:
            raise ConfigError("", f"anchors are not supported ({where})")
        tag = getattr(ev, "tag", None)
        if tag is not None:
            implicit = ev.implicit
            explicit = not any(implicit) if isinstance(implicit, tuple) else not implicit
            if explicit:
                raise ConfigError("", f"explicit tags are not supported ({where})")


def load_yaml_subset(text):
    """Parse ``text`` allowing only maps, sequences and scalars."""
    try:
        _check_events(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"not valid YAML: {exc}") from exc
    return {} if data is None else data


# --------------------------------------------------------------------------- field readers


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _map(value, path, allowed):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping")
    for key in value:
        if not isinstance(key, str):
            raise ConfigError(path, f"keys must be strings, got {key!r}")
        if key not in allowed:
            raise ConfigError(_join(path, key), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return value


def _number(value, path, positive=False, non_negative=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value:g}")
    if non_negative and value < 0:
        raise ConfigError(path, f"must be non-negative, got {value:g}")
    return value


def _integer(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def _boolean(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _vec3(value, path):
    if not isinstance(value, list) or len(value) != 3:
        raise ConfigError(path, "expected a list of 3 numbers")
    return np.array([_number(v, f"{path}[{k}]") for k, v in enumerate(value)])


def _opt(d, key, path, reader, default, **kw):
    return reader(d[key], _join(path, key), **kw) if key in d else default


# --------------------------------------------------------------------------- sections


def _trajectory(value, path):
    d = _map(value, path, {"pos_amplitude_m", "ang_amplitude_rad", "freq_min_hz", "freq_max_hz", "n_terms"})
    base = TrajectoryBounds()
    kw = {
        k: _opt(d, k, path, _number, getattr(base, k), non_negative=True)
        for k in ("pos_amplitude_m", "ang_amplitude_rad", "freq_min_hz", "freq_max_hz")
    }
    kw["n_terms"] = _opt(d, "n_terms", path, _integer, base.n_terms, minimum=1)
    try:
        return TrajectoryBounds(**kw)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _imu(value, path, index):
    d = _map(value, path, {"preset", "densities", "rate_hz", "bias_rw", "extrinsic", "bias", "init_error_std", "name"})
    if ("preset" in d) == ("densities" in d):
        raise ConfigError(path, "give exactly one of 'preset' or 'densities'")
    rate = _opt(d, "rate_hz", path, _number, 100.0, positive=True)
    rw = _map(d.get("bias_rw"), _join(path, "bias_rw"), {"accel", "gyro"})
    rw_kw = {}
    if "accel" in rw:
        rw_kw["accel_bias_rw"] = _number(rw["accel"], _join(path, "bias_rw.accel"), positive=True)
    if "gyro" in rw:
        rw_kw["gyro_bias_rw"] = _number(rw["gyro"], _join(path, "bias_rw.gyro"), positive=True)
    if "preset" in d:
        name = d["preset"]
        if not isinstance(name, str):
            raise ConfigError(_join(path, "preset"), "expected a preset name")
        try:
            noise = preset_noise(name, rate_hz=rate, **rw_kw)
        except ValueError as exc:
            raise ConfigError(_join(path, "preset"), str(exc)) from exc
    else:
        dp = _join(path, "densities")
        dd = _map(d["densities"], dp, {"accel", "gyro"})
        for k in ("accel", "gyro"):
            if k not in dd:
                raise ConfigError(_join(dp, k), "required")
        noise = NoiseParams(
            _number(dd["accel"], _join(dp, "accel"), positive=True),
            _number(dd["gyro"], _join(dp, "gyro"), positive=True),
            rate_hz=rate,
            **rw_kw,
        )
    ext = _map(d.get("extrinsic"), _join(path, "extrinsic"), {"pos_m", "rotvec_rad"})
    bias = _map(d.get("bias"), _join(path, "bias"), {"accel", "gyro"})
    ie = _map(d.get("init_error_std"), _join(path, "init_error_std"), {"pos_m", "ang_rad", "ba", "bw"})
    base = InitErrorStd()
    init = InitErrorStd(
        **{k: _opt(ie, k, _join(path, "init_error_std"), _number, getattr(base, k), non_negative=True)
           for k in ("pos_m", "ang_rad", "ba", "bw")}
    )
    pe, be = _join(path, "extrinsic"), _join(path, "bias")
    name = d.get("name", d.get("preset", f"imu{index}"))
    if not isinstance(name, str):
        raise ConfigError(_join(path, "name"), "expected a string")
    return ImuSpec(
        noise,
        _opt(ext, "pos_m", pe, _vec3, np.zeros(3)),
        _opt(ext, "rotvec_rad", pe, _vec3, np.zeros(3)),
        _opt(bias, "accel", be, _vec3, np.zeros(3)),
        _opt(bias, "gyro", be, _vec3, np.zeros(3)),
        init,
        name=name,
    )


def _camera(value, path):
    if value is False:
        return None
    d = _map(value, path, {"rate_hz", "focal_px", "resolution", "pixel_noise_std", "landmarks"})
    base = CameraModel()
    res = base.resolution
    if "resolution" in d:
        r = d["resolution"]
        rp = _join(path, "resolution")
        if not isinstance(r, list) or len(r) != 2:
            raise ConfigError(rp, "expected [width, height]")
        res = tuple(_integer(v, f"{rp}[{k}]", minimum=1) for k, v in enumerate(r))
    model = CameraModel(
        f_px=_opt(d, "focal_px", path, _number, base.f_px, positive=True),
        c=np.array(res, dtype=float) / 2.0,
        resolution=res,
        pixel_noise_std=_opt(d, "pixel_noise_std", path, _number, base.pixel_noise_std, positive=True),
        rate_hz=_opt(d, "rate_hz", path, _number, base.rate_hz, positive=True),
    )
    lp = _join(path, "landmarks")
    lm = _map(d.get("landmarks"), lp, {"nx", "ny", "spacing_m", "offset_m"})
    spec = CameraSpec()
    return CameraSpec(
        model,
        _opt(lm, "nx", lp, _integer, spec.nx, minimum=1),
        _opt(lm, "ny", lp, _integer, spec.ny, minimum=1),
        _opt(lm, "spacing_m", lp, _number, spec.spacing_m, positive=True),
        _opt(lm, "offset_m", lp, _number, spec.offset_m, positive=True),
    )


FILTER_KEYS = {"accel_drive", "rate_drive", "ang_accel_drive", "gate", "output_rate_hz", "check_covariance"}
TOP_KEYS = {
    "seed", "duration_s", "runs", "mode", "calibrating", "add_noise", "trajectory", "imus", "camera",
    "filter", "output_dir",
}


def config_from_dict(data):
    """Validate a parsed document and build a :class:`ConfigFile`."""
    d = _map(data, "", TOP_KEYS)
    mode = d.get("mode", "multi_update")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {mode!r}")
    if "imus" in d:
        if not isinstance(d["imus"], list) or not d["imus"]:
            raise ConfigError("imus", "expected a non-empty list")
        imus = [_imu(v, f"imus[{k}]", k) for k, v in enumerate(d["imus"])]
        if np.any(imus[0].pos_m != 0) or np.any(imus[0].rotvec_rad != 0):
            raise ConfigError("imus[0].extrinsic", "IMU 0 defines the body frame and must have zero extrinsics")
    else:
        imus = default_imus()
    f = _map(d.get("filter"), "filter", FILTER_KEYS)
    base = SimConfig.__dataclass_fields__
    gate = f.get("gate")
    if gate is not None:
        gate = _number(gate, "filter.gate", positive=True)
    out = d.get("output_dir", "mimu_out")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a non-empty string")
    try:
        sim = SimConfig(
            seed=_opt(d, "seed", "", _integer, 0, minimum=0),
            duration_s=_opt(d, "duration_s", "", _number, 60.0, positive=True),
            trajectory=_trajectory(d.get("trajectory"), "trajectory"),
            imus=imus,
            camera=_camera(d["camera"], "camera") if "camera" in d else CameraSpec(),
            mode=mode,
            calibrating=_opt(d, "calibrating", "", _boolean, True),
            add_noise=_opt(d, "add_noise", "", _boolean, True),
            accel_drive=_opt(f, "accel_drive", "filter", _number, base["accel_drive"].default, non_negative=True),
            rate_drive=_opt(f, "rate_drive", "filter", _number, base["rate_drive"].default, non_negative=True),
            ang_accel_drive=_opt(f, "ang_accel_drive", "filter", _number, base["ang_accel_drive"].default,
                                 non_negative=True),
            output_rate_hz=_opt(f, "output_rate_hz", "filter", _number, base["output_rate_hz"].default, positive=True),
            gate=gate,
            check_covariance=_opt(f, "check_covariance", "filter", _boolean, False),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("", str(exc)) from exc
    if sim.mode == "single_predictor" and sim.camera is None:
        raise ConfigError("camera", "single_predictor mode needs a camera")
    return ConfigFile(sim, _opt(d, "runs", "", _integer, 1, minimum=1), out)


def parse_config(path):
    """Read and validate a configuration file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror or exc}") from exc
    cfg = config_from_dict(load_yaml_subset(text))
    cfg.source = str(p)
    return cfg
