"""Flat ``key = value`` config files merged with CLI flags.

Precedence is flag > config file > default. Keys are the option names with
dashes or underscores (``global-batch`` and ``global_batch`` are the same key).
"""

from .errors import ConfigError


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    out = [int(x) for x in str(text).split(",") if x.strip()]
    if not out:
        raise ValueError("empty list")
    return out


# key -> (converter, default)
SCHEMA = {
    # prepare
    "input": (str, None),
    "output": (str, None),
    "min_ratings": (int, 1),
    "holdout": (int, 30),
    "k": (int, 5),
    "holdout_order": (str, "first"),
    # train
    "data": (str, None),
    "epochs": (int, 100),
    "hidden": (int, 100),
    "lr": (float, 0.001),
    "global_batch": (int, 512),
    "gibbs": (int, 1),
    "seed": (int, 0),
    "init_sigma": (float, 0.01),
    "shuffle": (_bool, True),
    "check_consistency": (_bool, False),
    "model": (str, None),
    "history": (str, None),
    "workers": (str, None),
    "rank": (int, 0),
    "spawn_local": (int, None),
    "threads": (int, None),
    "timeout": (float, 30.0),
    # evaluate / predict
    "report": (str, None),
    "predict_mode": (str, "argmax"),
    "user": (int, None),
    "item": (int, None),
    # svd
    "q_list": (int_list, [2, 5, 10, 20, 50]),
    "round": (_bool, False),
    # bench
    "scaling_mode": (str, "strong"),
    "workers_list": (int_list, [1, 2, 4, 8]),
    "warmup": (int, 1),
    "reps": (int, 3),
    "strong_batch": (int, 512),
    "weak_batch": (int, 100),
    "transport": (str, "socket"),
    # synth
    "users": (int, 610),
    "items": (int, 9724),
    "factors": (int, 8),
}


def normalize_key(key):
    return key.strip().replace("-", "_")


def read_config(text, source="<config>"):
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key = normalize_key(key)
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return values


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return read_config(fh.read(), source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def resolve(namespace, file_values):
    """Fill every ``None`` attribute of ``namespace`` from the file, then defaults."""
    for key, (_, default) in SCHEMA.items():
        if not hasattr(namespace, key):
            continue
        if getattr(namespace, key) is None:
            setattr(namespace, key, file_values.get(key, default))
    return namespace
