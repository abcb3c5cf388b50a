"""Recompute the frozen credential vectors without the Rust code.

Writes oracle.json next to this file. Needs the `cryptography` package.
"""

import base64
import hashlib
import json
import pathlib

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

HERE = pathlib.Path(__file__).parent


def b64(raw):
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode()


def unb64(text):
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def canonical(value):
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def sha(raw):
    return hashlib.sha256(raw).digest()


def verify(pk, message, sig):
    try:
        Ed25519PublicKey.from_public_bytes(unb64(pk)).verify(unb64(sig), message)
        return True
    except Exception:
        return False


cred = json.loads((HERE / "credential.json").read_text())
pres = json.loads((HERE / "presentation.json").read_text())
records = [json.loads(line) for line in (HERE / "registry.jsonl").read_text().splitlines() if line]
issuer_pk = next(r["body"]["verification_key"] for r in records if r["kind"] == "did")

digests = [b64(sha(canonical([a["name"], a["value"], a["salt"]]))) for a in cred["attributes"]]
root = sha(canonical([digests, cred["creddef_id"], cred["credential_index"], cred["holder_binding_pk"]]))

# the presentation's root from its openings and undisclosed digests, in schema order
by_name = {a["name"]: b64(sha(canonical([a["name"], a["value"], a["salt"]]))) for a in pres["disclosed"]}
by_name.update({u["name"]: u["digest"] for u in pres["undisclosed"]})
names = [a["name"] for a in cred["attributes"]]
pres_root = sha(canonical([[by_name[n] for n in names], pres["creddef_id"], pres["credential_index"], pres["holder_binding_pk"]]))

holder_message = canonical(
    {"root": pres["root"], "channel_nonce": pres["channel_nonce"], "disclosed": [a["name"] for a in pres["disclosed"]]}
)
zero = Ed25519PrivateKey.from_private_bytes(bytes(32)).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

oracle = {
    "attribute_digests": digests,
    "root": b64(root),
    "root_matches_credential": b64(root) == cred["root"],
    "presentation_root": b64(pres_root),
    "issuer_signature_valid": verify(issuer_pk, root, cred["issuer_signature"]) and b64(pres_root) == pres["root"],
    "holder_signature_valid": verify(pres["holder_binding_pk"], holder_message, pres["holder_signature"]),
    "hash_empty": b64(sha(b"")),
    "zero_seed_public_key": b64(zero),
}
(HERE / "oracle.json").write_text(json.dumps(oracle, indent=2, sort_keys=True) + "\n")
print(json.dumps(oracle, indent=2, sort_keys=True))
