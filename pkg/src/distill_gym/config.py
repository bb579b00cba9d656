"""Problem configuration files.

A problem is one JSON document::

    {
      "name": "btx",                       # optional
      "components": [{name, antoine_a, antoine_b, antoine_c, t_valid_min,
                      t_valid_max, molar_mass, latent_heat, liquid_density}, ...],
      "feed": {"flows": [mol/s, ...], "temperature": K, "pressure": Pa},
      "pricing": {"purity_spec": mole fraction, "prices": [$/tonne, ...]},
      "economics": {EconomicParams overrides},          # optional
      "action_bounds": {"pressure_min": Pa, "pressure_max": Pa,
                        "stages_min": int, "stages_max": int,
                        "ratio_min": float, "ratio_max": float},   # optional
      "env": {"max_columns": int, "fail_penalty": float,
              "reward_scale": $/yr},                    # optional
      "agent": {AgentConfig overrides}                  # optional
    }

Component entries may also be a bare name from the bundled property table.
Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .agent import AgentConfig
from .economics import EconomicParams, ProductPricing
from .env import ActionBounds, ProblemSpec
from .thermo import Component, Stream, load_component_library

BUNDLED = ("btx", "hydrocarbon")

_TOP_KEYS = {"name", "components", "feed", "pricing", "economics", "action_bounds", "env", "agent"}
_REQUIRED = ("components", "feed", "pricing")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid problem configuration:\n  " + "\n  ".join(self.problems))


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _check_keys(section: dict, allowed: set, path: str, problems: list, required=()):
    if not isinstance(section, dict):
        problems.append(f"{path}: expected an object")
        return False
    for key in sorted(set(section) - allowed):
        problems.append(f"{path}.{key}: unknown key")
    for key in required:
        if key not in section:
            problems.append(f"{path}.{key}: missing")
    return True


def _number_list(value, path, problems, positive_total=False, nonneg=True):
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        problems.append(f"{path}: expected a list of numbers")
        return None
    if nonneg and any(v < 0 for v in value):
        problems.append(f"{path}: entries must be >= 0")
    if positive_total and not sum(value) > 0:
        problems.append(f"{path}: total must be > 0")
    return [float(v) for v in value]


def problem_from_dict(data: dict, name: str = "problem") -> tuple[ProblemSpec, AgentConfig]:
    problems: list[str] = []
    if not _check_keys(data, _TOP_KEYS, "$", problems, _REQUIRED):
        raise ConfigError(problems)
    if problems:
        raise ConfigError(problems)

    library = None
    components = []
    comp_keys = _field_names(Component)
    raw_components = data["components"]
    if not isinstance(raw_components, list) or len(raw_components) < 2:
        problems.append("$.components: expected a list of at least 2 components")
        raw_components = []
    for i, rec in enumerate(raw_components):
        path = f"$.components[{i}]"
        if isinstance(rec, str):
            library = library or load_component_library()
            if rec not in library:
                problems.append(f"{path}: unknown bundled component {rec!r}")
            else:
                components.append(library[rec])
            continue
        if _check_keys(rec, comp_keys, path, problems, sorted(comp_keys)):
            try:
                components.append(Component(**rec))
            except (TypeError, ValueError) as exc:
                problems.append(f"{path}: {exc}")
    n = len(raw_components)

    feed = None
    fd = data["feed"]
    if _check_keys(fd, {"flows", "temperature", "pressure"}, "$.feed", problems, ("flows", "temperature", "pressure")):
        flows = _number_list(fd.get("flows"), "$.feed.flows", problems, positive_total=True)
        if flows is not None and len(flows) != n:
            problems.append(f"$.feed.flows: {len(flows)} entries for {n} components")
        for key in ("temperature", "pressure"):
            if key in fd and not (isinstance(fd[key], (int, float)) and fd[key] > 0):
                problems.append(f"$.feed.{key}: must be > 0")
        if not problems:
            feed = Stream(flows, fd["temperature"], fd["pressure"])

    pricing = None
    pr = data["pricing"]
    if _check_keys(pr, {"purity_spec", "prices"}, "$.pricing", problems, ("purity_spec", "prices")):
        prices = _number_list(pr.get("prices"), "$.pricing.prices", problems)
        if prices is not None and len(prices) != n:
            problems.append(f"$.pricing.prices: {len(prices)} entries for {n} components")
        purity = pr.get("purity_spec")
        if not (isinstance(purity, (int, float)) and 0 < purity < 1):
            problems.append("$.pricing.purity_spec: must lie in (0, 1)")
        if not problems:
            pricing = ProductPricing(float(purity), prices)

    def build(cls, key):
        section = data.get(key, {})
        if not _check_keys(section, _field_names(cls), f"$.{key}", problems):
            return None
        try:
            return cls(**section)
        except (TypeError, ValueError) as exc:
            problems.append(f"$.{key}: {exc}")
            return None

    economics = build(EconomicParams, "economics")
    bounds = build(ActionBounds, "action_bounds")
    if bounds is not None:
        problems.extend(f"$.{p}: bounds not ordered or out of range" for p in bounds.problems())
    agent = build(AgentConfig, "agent")
    env = data.get("env", {})
    _check_keys(env, {"max_columns", "fail_penalty", "reward_scale"}, "$.env", problems)
    if problems:
        raise ConfigError(problems)
    try:
        problem = ProblemSpec(
            components=tuple(components),
            feed=feed,
            pricing=pricing,
            economics=economics,
            action_bounds=bounds,
            name=data.get("name", name),
            **env,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"$.env: {exc}"]) from None
    return problem, agent


def resolve_problem_path(path) -> Path:
    """A filesystem path, or the name of a bundled problem (``btx``, ``hydrocarbon.json``)."""
    p = Path(path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in BUNDLED and p.parent == Path("."):
        return Path(str(resources.files("distill_gym").joinpath(f"problems/{stem}.json")))
    raise FileNotFoundError(f"problem file not found: {path}")


def load_config(path) -> tuple[ProblemSpec, AgentConfig]:
    p = resolve_problem_path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: not valid JSON ({exc})"]) from None
    return problem_from_dict(data, name=p.stem)


def load_problem(path) -> ProblemSpec:
    return load_config(path)[0]
