import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=None)
def load_schema(name):
    return json.loads(resources.files("tsallis_lq").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(instance, name, error=ValueError):
    try:
        jsonschema.validate(instance, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise error(f"invalid {name} at {where}: {exc.message}") from None
