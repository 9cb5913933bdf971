"""Run configuration: defaults, INI-style files and dotted-key overrides.

A config file is INI with sections ``data``, ``columns``, ``bins``,
``level_maps``, ``references``, ``model``, ``prior``, ``mcmc``,
``dispersion`` and ``output``.  Internally every value lives under a dotted
key such as ``mcmc.chains`` or ``bins.veh_value``.

Precedence, lowest first: built-in defaults, the config file,
``--set key=value`` pairs, then the dedicated command-line flags.  A file
section among ``columns``, ``bins``, ``level_maps`` and ``references``
replaces the default section as a whole.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass
from typing import Mapping

from . import dataio
from .edf import get_family
from .errors import DataError
from .posterior import Fixed, McmcConfig, NormalPrior, PriorSpec, UniformBox

__all__ = ["DEFAULTS", "RunConfig", "load_config", "parse_prior"]

REPLACED_SECTIONS = ("columns", "bins", "level_maps", "references")

DEFAULTS: dict[str, str] = {
    "data.path": "",
    "data.classes": "",
    "data.response": "claimcst0",
    "data.weight": "numclaims",
    "data.response_is_total": "true",
    "data.covariates": "agecat, gender, area, veh_value",
    **{f"columns.{k}": v for k, v in dataio.CAR_SCHEMA.items()},
    "bins.veh_value": "P1:0:1.2, P2:1.2:1.86, P3:1.86:inf",
    "level_maps.area": "A:ABCD, B:ABCD, C:ABCD, D:ABCD",
    "references.agecat": "1",
    "references.gender": "F",
    "references.area": "ABCD",
    "references.veh_value": "P1",
    "model.family": "gamma",
    "model.link": "log",
    "prior.beta": "uniform(-20, 20)",
    "prior.phi": "uniform(0, 1000)",
    "mcmc.chains": "3",
    "mcmc.warmup": "2000",
    "mcmc.kept": "28000",
    "mcmc.seed": "2019",
    "mcmc.target_accept": "0.234",
    "dispersion.method": "both",
    "dispersion.replicates": "10000",
    "dispersion.lower": "1e-6",
    "dispersion.upper": "",
    "output.dir": "out",
}

_PRIOR = re.compile(r"^\s*(uniform|normal|fixed)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


def parse_prior(text: str):
    m = _PRIOR.match(text)
    if not m:
        raise DataError(f"cannot parse prior {text!r}; use uniform(lo, hi), normal(mean, sd) or fixed(v)")
    kind = m.group(1).lower()
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError as exc:
        raise DataError(f"bad prior arguments in {text!r}") from exc
    try:
        if kind == "uniform" and len(args) == 2:
            return UniformBox(*args)
        if kind == "normal" and len(args) == 2:
            return NormalPrior(*args)
        if kind == "fixed" and len(args) == 1:
            return Fixed(args[0])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    raise DataError(f"wrong number of arguments in prior {text!r}")


def _as_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise DataError(f"not a boolean: {text!r}")


def _section(flat: Mapping[str, str], name: str) -> dict[str, str]:
    pre = name + "."
    return {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}


@dataclass
class RunConfig:
    values: dict

    def get(self, key: str) -> str:
        return self.values[key]

    @property
    def data_path(self) -> str:
        return self.values["data.path"]

    @property
    def classes_path(self) -> str:
        return self.values["data.classes"]

    @property
    def schema(self) -> dict[str, str]:
        schema = _section(self.values, "columns")
        bad = {k: v for k, v in schema.items() if v not in ("float", "int", "str")}
        if bad:
            raise DataError(f"unknown column types: {bad}")
        return schema

    @property
    def covariates(self) -> list[str]:
        return [c.strip() for c in self.values["data.covariates"].split(",") if c.strip()]

    @property
    def response_is_total(self) -> bool:
        return _as_bool(self.values["data.response_is_total"])

    @property
    def rules(self) -> list:
        rules = [dataio.parse_bins(c, t) for c, t in _section(self.values, "bins").items()]
        rules += [dataio.parse_level_map(c, t) for c, t in _section(self.values, "level_maps").items()]
        return rules

    @property
    def references(self) -> dict[str, str]:
        return _section(self.values, "references")

    @property
    def family(self) -> str:
        return self.values["model.family"]

    @property
    def link(self) -> str:
        return self.values["model.link"]

    @property
    def prior(self) -> PriorSpec:
        beta = parse_prior(self.values["prior.beta"])
        if isinstance(beta, Fixed):
            raise DataError("coefficients cannot have a fixed prior")
        phi_text = self.values["prior.phi"].strip()
        fam = get_family(self.family)
        if fam.dispersion_fixed is not None:
            return PriorSpec(beta=beta, phi=None)
        return PriorSpec(beta=beta, phi=parse_prior(phi_text) if phi_text else None)

    @property
    def mcmc(self) -> McmcConfig:
        v = self.values
        try:
            return McmcConfig(
                chains=int(v["mcmc.chains"]),
                warmup=int(v["mcmc.warmup"]),
                kept=int(v["mcmc.kept"]),
                seed=int(v["mcmc.seed"]),
                target_accept=float(v["mcmc.target_accept"]),
            )
        except ValueError as exc:
            raise DataError(f"bad mcmc setting: {exc}") from exc

    @property
    def dispersion_method(self) -> str:
        m = self.values["dispersion.method"].strip().lower()
        if m not in ("both", "proper", "monte_carlo"):
            raise DataError(f"dispersion.method must be both, proper or monte_carlo, got {m!r}")
        return m

    @property
    def replicates(self) -> int:
        return int(self.values["dispersion.replicates"])

    def dispersion_interval(self) -> tuple[float, float]:
        lo = float(self.values["dispersion.lower"])
        hi_text = self.values["dispersion.upper"].strip()
        if hi_text:
            return lo, float(hi_text)
        phi = self.prior.phi
        hi = phi.hi if isinstance(phi, UniformBox) else 1000.0
        return lo, hi

    @property
    def out_dir(self) -> str:
        return self.values["output.dir"]

    def digest(self) -> str:
        """Short hash of every setting that affects results."""
        relevant = {k: v for k, v in sorted(self.values.items()) if not k.startswith("output.")}
        return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]

    def header_lines(self) -> list[str]:
        return [f"config_hash={self.digest()} seed={self.values['mcmc.seed']}"]


def load_config(path: str | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    values = dict(DEFAULTS)
    if path:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str  # keep column names case-sensitive
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise DataError(f"bad config file {path}: {exc}") from exc
        for section in parser.sections():
            if section in REPLACED_SECTIONS:
                for key in [k for k in values if k.startswith(section + ".")]:
                    del values[key]
            for key, val in parser.items(section):
                values[f"{section}.{key}"] = val
    for key, val in (overrides or {}).items():
        if "." not in key:
            raise DataError(f"override key {key!r} must be dotted, e.g. mcmc.chains")
        values[key] = str(val)
    return RunConfig(values)
