"""Run configuration: INI sections with a typed schema, canonical form and digest."""

import configparser
import hashlib
import logging
from pathlib import Path

from . import model
from .errors import ConfigurationError
from .ising_mc import McConfig, MoveWeights

log = logging.getLogger(__name__)

DIGEST_CHARS = 16


def _float_list(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*allowed):
    def parse(text):
        value = str(text).strip()
        if value not in allowed:
            raise ValueError(f"{value!r} is not one of {', '.join(allowed)}")
        return value
    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "dimension": (int, 3),
        "dispersion": (_choice(*[d.value for d in model.Dispersion]), "massless"),
        "mass": (float, 0.0),
        "alpha": (float, 0.5),
        "cutoff": (_choice(*[c.value for c in model.Cutoff]), "sharp"),
        "cutoff_radius": (float, 1.0),
        "lambda": (float, 0.0),
        "mu": (float, 0.0),
    },
    "discretization": {
        "n_modes": (int, 8),
        "scheme": (_choice(*[s.value for s in model.Scheme]), "gauss-legendre"),
        "regularization": (_choice("massive-shift", "massive-quadrature"), "massive-shift"),
        "regularization_mass": (float, 0.0),
        "omega": (_float_list, []),
        "v": (_float_list, []),
        "n_max": (int, 4),
        "N_max": (int, 4),
        "fd_step": (float, 1e-3),
        "ladder_masses": (_float_list, [0.8, 0.4, 0.2, 0.1]),
        "budget_mb": (float, 0.0),
    },
    "kernel": {
        "source": (_choice("discrete", "continuum"), "discrete"),
        "t_max": (float, 0.0),
        "tolerance": (float, 1e-9),
    },
    "mc": {
        "T": (float, 10.0),
        "samples": (int, 20000),
        "chains": (int, 4),
        "burn_in": (float, 0.1),
        "thinning": (int, 1),
        "seed": (int, 0),
        "chunk_size": (int, 4096),
        "moves_per_sweep": (int, 0),
        "max_jumps": (int, 0),
        "w_insert_pair": (float, 1.0),
        "w_delete_pair": (float, 1.0),
        "w_shift": (float, 2.0),
        "w_flip": (float, 0.5),
        "w_insert_one": (float, 0.5),
        "w_delete_one": (float, 0.5),
    },
    "scan": {
        "lambdas": (_float_list, [0.0, 0.1, 0.2]),
        "horizons": (_float_list, [10.0, 20.0]),
    },
    "output": {
        "directory": (str, "results"),
        "format": (_choice("json", "csv"), "json"),
        "dump_vector": (_bool, False),
    },
}


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


def _parse_value(section, key, raw):
    parser, _ = SCHEMA[section][key]
    try:
        return parser(raw.strip() if isinstance(raw, str) else raw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"[{section}] {key} = {raw!r}: {e}", reason="config.bad_value") from e


class RunConfig:
    """Typed view of a run configuration; every key of SCHEMA is always present."""

    def __init__(self, values=None, source=None):
        self.values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
        self.source = source
        for section, keys in (values or {}).items():
            for key, raw in keys.items():
                self.set(section, key, raw)

    @classmethod
    def from_text(cls, text, source=None):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(source or "<config>"))
        except configparser.Error as e:
            raise ConfigurationError(f"cannot parse config: {e}", reason="config.syntax") from e
        return cls({s: dict(parser.items(s)) for s in parser.sections()}, source=source)

    @classmethod
    def from_file(cls, path, overrides=()):
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}", reason="config.missing")
        config = cls.from_text(path.read_text(), source=path)
        for item in overrides:
            config.apply_override(item)
        return config

    def set(self, section, key, raw):
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]", reason="config.unknown_section")
        if key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]", reason="config.unknown_key")
        self.values[section][key] = _parse_value(section, key, raw)

    def apply_override(self, item):
        """Apply a 'section.key=value' override."""
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override must look like section.key=value, got {item!r}",
                                     reason="config.bad_override")
        dotted, raw = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        self.set(section, key, raw)
        log.debug("override %s.%s = %s", section, key, raw)

    def __getitem__(self, section):
        return self.values[section]

    def canonical_text(self):
        lines = []
        for section in sorted(self.values):
            lines.append(f"[{section}]")
            for key in sorted(self.values[section]):
                lines.append(f"{key} = {_render(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        """First 16 hex characters of the SHA-256 of the canonical text."""
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:DIGEST_CHARS]

    def model_spec(self):
        return model.ModelSpec.from_mapping(self.values["model"])

    def modes(self):
        """DiscreteModes: the manual (omega, v) lists if given, else the discretized model."""
        d = self.values["discretization"]
        if d["omega"] or d["v"]:
            if len(d["omega"]) != len(d["v"]):
                raise ConfigurationError("[discretization] omega and v lists differ in length",
                                         reason="config.bad_value")
            return model.DiscreteModes.manual(d["omega"], d["v"])
        spec = self.model_spec()
        if d["regularization_mass"] > 0.0:
            spec = model.regularize_mass(spec, d["regularization_mass"], d["regularization"])
        return model.discretize(spec, d["n_modes"], d["scheme"])

    def kernel_source(self):
        return self.model_spec() if self.values["kernel"]["source"] == "continuum" else self.modes()

    def kernel_t_max(self, horizons=()):
        """Configured t_max, or four times the largest planned horizon."""
        t_max = self.values["kernel"]["t_max"]
        if t_max > 0.0:
            return t_max
        largest = max([self.values["mc"]["T"], *horizons])
        return 4.0 * largest

    def mc_config(self, threads=1, seed=None, **changes):
        m = self.values["mc"]
        weights = MoveWeights(
            insert_pair=m["w_insert_pair"],
            delete_pair=m["w_delete_pair"],
            shift=m["w_shift"],
            flip=m["w_flip"],
            insert_one=m["w_insert_one"],
            delete_one=m["w_delete_one"],
        )
        settings = dict(
            horizon=m["T"],
            samples=m["samples"],
            chains=m["chains"],
            burn_in=m["burn_in"],
            thinning=m["thinning"],
            seed=m["seed"] if seed is None else int(seed),
            weights=weights,
            chunk_size=m["chunk_size"],
            moves_per_sweep=m["moves_per_sweep"],
            max_jumps=m["max_jumps"],
            threads=threads,
        )
        settings.update(changes)
        return McConfig(**settings)
