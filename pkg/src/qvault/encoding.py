import hashlib
import json


def canonical_json(obj) -> str:
    """Compact JSON that keeps dict insertion order; callers fix field order."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def canonical_bytes(obj) -> bytes:
    return canonical_json(obj).encode("ascii")


def digest(obj) -> str:
    return hashlib.sha256(canonical_bytes(obj)).hexdigest()
