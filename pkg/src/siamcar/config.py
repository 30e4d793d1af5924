"""Plain ``key=value`` config files shared by every CLI verb."""
import os


def parse_kv(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path):
    with open(path) as fh:
        return parse_kv(fh.read(), source=str(path))


def format_kv(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def write_kv(path, mapping):
    with open(path, "w") as fh:
        fh.write(format_kv(mapping))


def seed_override(seed):
    """``SIAMCAR_SEED`` wins over any configured seed."""
    env = os.environ.get("SIAMCAR_SEED")
    return int(env) if env not in (None, "") else seed


def coerce(fields, values, source):
    """Convert string values to the types of ``fields`` (name -> default).

    Unknown keys are an error so typos never silently fall back to defaults.
    """
    unknown = set(values) - set(fields)
    if unknown:
        raise ValueError(f"{source}: unknown keys {sorted(unknown)}")
    out = {}
    for key, raw in values.items():
        default = fields[key]
        if isinstance(default, bool):
            out[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            out[key] = int(raw)
        elif isinstance(default, float):
            out[key] = float(raw)
        elif isinstance(default, tuple):
            out[key] = tuple(int(v) for v in raw.split(","))
        else:
            out[key] = raw
    return out
