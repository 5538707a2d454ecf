"""Actor identities, RSA-4096 keys, detached signatures, surrogate ids.

Keys are RSA-4096 and signatures are PKCS#1 v1.5 over SHA-256, the one
scheme currently registered. The registry keeps the rest of the package
scheme-agnostic: documents carry an algorithm name and verifiers look the
scheme up instead of hard-coding primitives.

Key generation accepts an optional seed. A seeded call derives both primes
from a SHA-256 counter generator, so the same seed always yields the same
key pair; an unseeded call uses the operating system RNG.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import os
import secrets
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .canonical import iso_instant, sha256_hex
from .errors import (
    KeyParseError,
    SurrogateResolutionError,
    UnauthorizedRoleError,
    UnknownIdentityError,
    UnknownSchemeError,
)

RSA_BITS = 4096
PUBLIC_EXPONENT = 65537
DEFAULT_SCHEME = "RSA-SHA256-PKCS1v1.5"


class Role(str, Enum):
    DATA_SUBJECT = "DataSubject"
    DATA_CONTROLLER = "DataController"
    AUX_DATA_CONTROLLER = "AuxDataController"
    PLATFORM = "Platform"


# ---------------------------------------------------------------------------
# key material


@dataclass
class KeyPair:
    private_key: rsa.RSAPrivateKey
    public_pem: str
    key_id: str

    def public_key(self) -> rsa.RSAPublicKey:
        return self.private_key.public_key()

    def private_pem(self, passphrase: Optional[bytes] = None) -> bytes:
        if passphrase:
            enc: serialization.KeySerializationEncryption = (
                serialization.BestAvailableEncryption(passphrase)
            )
        else:
            enc = serialization.NoEncryption()
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            enc,
        )


def _counter_blocks(seed: bytes) -> Iterator[bytes]:
    counter = 0
    while True:
        yield hashlib.sha256(seed + counter.to_bytes(8, "big")).digest()
        counter += 1


def _draw_int(blocks: Iterator[bytes], bits: int) -> int:
    nbytes = (bits + 7) // 8
    buf = b""
    while len(buf) < nbytes:
        buf += next(blocks)
    value = int.from_bytes(buf[:nbytes], "big") & ((1 << bits) - 1)
    # top two bits set keeps p*q at full width; low bit set keeps it odd
    value |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
    return value


def _seeded_prime(blocks: Iterator[bytes], bits: int) -> int:
    while True:
        candidate = int(gmpy2.next_prime(_draw_int(blocks, bits)))
        if candidate.bit_length() != bits:
            continue
        if math.gcd(PUBLIC_EXPONENT, candidate - 1) != 1:
            continue
        return candidate


def _assemble(p: int, q: int) -> rsa.RSAPrivateKey:
    if p < q:
        p, q = q, p
    n = p * q
    lam = (p - 1) * (q - 1) // math.gcd(p - 1, q - 1)
    d = pow(PUBLIC_EXPONENT, -1, lam)
    numbers = rsa.RSAPrivateNumbers(
        p=p,
        q=q,
        d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(PUBLIC_EXPONENT, n),
    )
    return numbers.private_key()


def public_pem_of(key: rsa.RSAPrivateKey | rsa.RSAPublicKey) -> str:
    public = key.public_key() if isinstance(key, rsa.RSAPrivateKey) else key
    return public.public_bytes(
        serialization.Encoding.PEM,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    ).decode("ascii")


def key_id_of(public_pem: str) -> str:
    return sha256_hex(public_pem.encode("ascii"))


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Generate an RSA-4096 key pair, deterministically when seeded."""
    if seed is not None:
        blocks = _counter_blocks(seed)
        half = RSA_BITS // 2
        p = _seeded_prime(blocks, half)
        q = _seeded_prime(blocks, half)
        while q == p:
            q = _seeded_prime(blocks, half)
        private = _assemble(p, q)
    else:
        private = rsa.generate_private_key(
            public_exponent=PUBLIC_EXPONENT, key_size=RSA_BITS
        )
    pem = public_pem_of(private)
    return KeyPair(private_key=private, public_pem=pem, key_id=key_id_of(pem))


def load_public_key(public_pem: str) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_pem_public_key(public_pem.encode("ascii"))
    except (ValueError, UnicodeEncodeError) as exc:
        raise KeyParseError(f"bad public key material: {exc}") from exc
    if not isinstance(key, rsa.RSAPublicKey):
        raise KeyParseError("public key is not RSA")
    return key


def load_private_pem(pem: bytes, passphrase: Optional[bytes] = None) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(pem, password=passphrase)
    except (ValueError, TypeError) as exc:
        raise KeyParseError(f"bad private key material: {exc}") from exc
    if not isinstance(key, rsa.RSAPrivateKey):
        raise KeyParseError("private key is not RSA")
    return key


# ---------------------------------------------------------------------------
# signature scheme registry


@dataclass(frozen=True)
class SignatureBundle:
    signer_key_id: str
    algorithm: str
    signature: str  # hex
    signed_digest: str  # SHA-256 hex of the payload

    def to_doc(self) -> dict:
        return {
            "signer_key_id": self.signer_key_id,
            "algorithm": self.algorithm,
            "signature": self.signature,
            "signed_digest": self.signed_digest,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SignatureBundle":
        return cls(
            signer_key_id=doc["signer_key_id"],
            algorithm=doc["algorithm"],
            signature=doc["signature"],
            signed_digest=doc["signed_digest"],
        )


class _RsaSha256Pkcs1v15:
    name = DEFAULT_SCHEME

    @staticmethod
    def sign(private_key: rsa.RSAPrivateKey, payload: bytes) -> bytes:
        return private_key.sign(payload, padding.PKCS1v15(), hashes.SHA256())

    @staticmethod
    def verify(public_key: rsa.RSAPublicKey, payload: bytes, signature: bytes) -> bool:
        try:
            public_key.verify(signature, payload, padding.PKCS1v15(), hashes.SHA256())
            return True
        except InvalidSignature:
            return False


_SCHEMES = {_RsaSha256Pkcs1v15.name: _RsaSha256Pkcs1v15}


def get_scheme(name: str):
    try:
        return _SCHEMES[name]
    except KeyError:
        raise UnknownSchemeError(f"unknown signature scheme {name!r}") from None


def sign_digest(
    keypair: KeyPair, payload: bytes, algorithm: str = DEFAULT_SCHEME
) -> SignatureBundle:
    """Sign a payload; the bundle records which key and scheme produced it."""
    scheme = get_scheme(algorithm)
    raw = scheme.sign(keypair.private_key, payload)
    return SignatureBundle(
        signer_key_id=keypair.key_id,
        algorithm=algorithm,
        signature=raw.hex(),
        signed_digest=sha256_hex(payload),
    )


def verify_signature(
    public_key: rsa.RSAPublicKey, payload: bytes, bundle: SignatureBundle
) -> bool:
    scheme = get_scheme(bundle.algorithm)
    if bundle.signed_digest != sha256_hex(payload):
        return False
    try:
        raw = bytes.fromhex(bundle.signature)
    except ValueError:
        return False
    return scheme.verify(public_key, payload, raw)


# ---------------------------------------------------------------------------
# surrogate ids


@dataclass
class SurrogateMap:
    """Keyed mapping between primary ids and unlinkable surrogates.

    Surrogates are HMAC-SHA-256(salt, primary_id || index); without the salt
    they cannot be correlated back to the primary id, and distinct indices
    give the same primary id unlinkable public faces. Resolution is reserved
    to the platform role.
    """

    salt: bytes = field(default_factory=lambda: secrets.token_bytes(32))
    _forward: dict[str, tuple[str, int]] = field(default_factory=dict)

    def derive(self, primary_id: str, index: int) -> str:
        message = (primary_id + str(index)).encode("utf-8")
        surrogate = hmac.new(self.salt, message, hashlib.sha256).hexdigest()
        self._forward[surrogate] = (primary_id, index)
        return surrogate

    def resolve(self, surrogate: str, caller_role: Role) -> str:
        if caller_role is not Role.PLATFORM:
            raise UnauthorizedRoleError(
                f"role {caller_role.value} may not resolve surrogates"
            )
        try:
            return self._forward[surrogate][0]
        except KeyError:
            raise SurrogateResolutionError("unknown surrogate") from None

    def to_doc(self) -> dict:
        return {
            "salt": self.salt.hex(),
            "forward": {s: [p, i] for s, (p, i) in self._forward.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SurrogateMap":
        m = cls(salt=bytes.fromhex(doc["salt"]))
        m._forward = {s: (p, int(i)) for s, (p, i) in doc["forward"].items()}
        return m


def derive_surrogate(surrogate_map: SurrogateMap, primary_id: str, index: int) -> str:
    return surrogate_map.derive(primary_id, index)


def resolve_surrogate(
    surrogate_map: SurrogateMap, surrogate: str, caller_role: Role
) -> str:
    return surrogate_map.resolve(surrogate, caller_role)


# ---------------------------------------------------------------------------
# identities and the store


@dataclass
class Identity:
    identity_id: str
    display_name: str
    role: Role
    key_id: str
    key_history: list[str] = field(default_factory=list)
    created_at: str = ""

    def to_doc(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "display_name": self.display_name,
            "role": self.role.value,
            "key_id": self.key_id,
            "key_history": list(self.key_history),
            "created_at": self.created_at,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Identity":
        return cls(
            identity_id=doc["identity_id"],
            display_name=doc["display_name"],
            role=Role(doc["role"]),
            key_id=doc["key_id"],
            key_history=list(doc["key_history"]),
            created_at=doc["created_at"],
        )


class IdentityStore:
    """Identities plus their key material, in memory or on disk.

    On-disk layout under data_dir:
      identities/<identity_id>.json
      keys/<identity_id>.pem   (PKCS#8 blocks, encrypted, newest last)
      keys/keystore.secret     (passphrase for the PEM blocks)
    """

    def __init__(self, data_dir: Optional[Path] = None):
        self._lock = threading.RLock()
        self._identities: dict[str, Identity] = {}
        self._keys: dict[str, KeyPair] = {}  # key_id -> pair
        self._dir = Path(data_dir) if data_dir else None
        self._passphrase: Optional[bytes] = None
        if self._dir:
            self._load()

    # -- persistence ---------------------------------------------------

    def _load(self) -> None:
        assert self._dir is not None
        secret_path = self._dir / "keys" / "keystore.secret"
        if secret_path.exists():
            self._passphrase = secret_path.read_bytes().strip()
        else:
            secret_path.parent.mkdir(parents=True, exist_ok=True)
            self._passphrase = secrets.token_hex(32).encode("ascii")
            secret_path.write_bytes(self._passphrase + b"\n")
        ident_dir = self._dir / "identities"
        if ident_dir.is_dir():
            for path in sorted(ident_dir.glob("*.json")):
                identity = Identity.from_doc(json.loads(path.read_text()))
                self._identities[identity.identity_id] = identity
                self._load_keys(identity.identity_id)

    def _load_keys(self, identity_id: str) -> None:
        assert self._dir is not None
        pem_path = self._dir / "keys" / f"{identity_id}.pem"
        if not pem_path.exists():
            return
        blob = pem_path.read_bytes()
        marker = b"-----BEGIN"
        for chunk in blob.split(marker):
            if not chunk.strip():
                continue
            private = load_private_pem(marker + chunk, self._passphrase)
            pem = public_pem_of(private)
            pair = KeyPair(private_key=private, public_pem=pem, key_id=key_id_of(pem))
            self._keys[pair.key_id] = pair

    def _persist_identity(self, identity: Identity) -> None:
        if not self._dir:
            return
        path = self._dir / "identities" / f"{identity.identity_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(identity.to_doc(), indent=2, sort_keys=True))

    def _persist_key(self, identity_id: str, pair: KeyPair) -> None:
        if not self._dir:
            return
        pem_path = self._dir / "keys" / f"{identity_id}.pem"
        pem_path.parent.mkdir(parents=True, exist_ok=True)
        with pem_path.open("ab") as fh:
            fh.write(pair.private_pem(self._passphrase))

    # -- operations ----------------------------------------------------

    def create_identity(
        self,
        display_name: str,
        role: Role,
        seed: Optional[bytes] = None,
        now: Optional[datetime] = None,
    ) -> Identity:
        pair = generate_keypair(seed)
        identity = Identity(
            identity_id=uuid.uuid4().hex,
            display_name=display_name,
            role=role,
            key_id=pair.key_id,
            key_history=[pair.key_id],
            created_at=iso_instant(now or datetime.now(timezone.utc)),
        )
        with self._lock:
            self._identities[identity.identity_id] = identity
            self._keys[pair.key_id] = pair
            self._persist_identity(identity)
            self._persist_key(identity.identity_id, pair)
        return identity

    def get(self, identity_id: str) -> Identity:
        with self._lock:
            try:
                return self._identities[identity_id]
            except KeyError:
                raise UnknownIdentityError(f"unknown identity {identity_id}") from None

    def list_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._identities)

    def keypair_of(self, identity_id: str) -> KeyPair:
        identity = self.get(identity_id)
        with self._lock:
            return self._keys[identity.key_id]

    def public_key_by_key_id(self, key_id: str) -> rsa.RSAPublicKey:
        """Look up any current or historical key, for verifying old bundles."""
        with self._lock:
            try:
                return self._keys[key_id].public_key()
            except KeyError:
                raise UnknownIdentityError(f"unknown key id {key_id}") from None

    def rotate_key(self, identity_id: str, seed: Optional[bytes] = None) -> Identity:
        """Install a fresh key pair; prior keys stay resolvable for verification."""
        pair = generate_keypair(seed)
        with self._lock:
            identity = self.get(identity_id)
            identity.key_id = pair.key_id
            identity.key_history.append(pair.key_id)
            self._keys[pair.key_id] = pair
            self._persist_identity(identity)
            self._persist_key(identity_id, pair)
        return identity

    def sign(self, identity_id: str, payload: bytes) -> SignatureBundle:
        return sign_digest(self.keypair_of(identity_id), payload)

    def verify(self, payload: bytes, bundle: SignatureBundle) -> bool:
        try:
            public = self.public_key_by_key_id(bundle.signer_key_id)
        except UnknownIdentityError:
            return False
        return verify_signature(public, payload, bundle)
