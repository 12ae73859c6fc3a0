#!/usr/bin/env python3
"""Validates every response in a `report --out` bundle against the shipped schemas.

Usage: validate_bundle.py <bundle_dir> [schemas_dir]

Each file listed in the bundle's manifest is checked against the schema its
endpoint maps to in schemas/endpoints.json (error.schema.json for non-2xx
bodies). Prints one JSON summary line; exits 1 if anything fails.
"""

import json
import re
import sys
from pathlib import Path

from jsonschema import Draft202012Validator
from referencing import Registry, Resource


def load_schemas(schema_dir):
    docs = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources((name, Resource.from_contents(doc)) for name, doc in docs.items())
    for doc in docs.values():
        Draft202012Validator.check_schema(doc)
    validators = {name: Draft202012Validator(doc, registry=registry) for name, doc in docs.items()}
    routes = json.loads((schema_dir / "endpoints.json").read_text())
    return validators, [(re.compile(rx), name) for rx, name in routes["success"]], routes["error"]


def main():
    bundle = Path(sys.argv[1])
    schema_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(__file__).resolve().parent.parent / "schemas"
    validators, routes, error_schema = load_schemas(schema_dir)
    manifest = json.loads((bundle / "manifest.json").read_text())

    checked, failures, statuses = 0, [], {}
    for file, entry in sorted(manifest["files"].items()):
        body = json.loads((bundle / file).read_text())
        status = entry["status"]
        statuses[status] = statuses.get(status, 0) + 1
        if 200 <= status < 300:
            names = [name for rx, name in routes if rx.match(entry["path"])]
            if not names:
                failures.append({"file": file, "error": "no schema for " + entry["path"]})
                continue
            name = names[0]
        else:
            name = error_schema
            if body.get("status") != status:
                failures.append({"file": file, "error": "status field does not match HTTP status"})
        errors = sorted(validators[name].iter_errors(body), key=lambda e: list(e.absolute_path))
        checked += 1
        for e in errors[:3]:
            failures.append({"file": file, "schema": name, "at": "/".join(map(str, e.absolute_path)), "error": e.message[:200]})

    print(json.dumps({"checked": checked, "statuses": statuses, "failures": failures}))
    return 1 if failures or checked == 0 else 0


if __name__ == "__main__":
    sys.exit(main())
