"""Trusted timestamping against randomness beacons, bitcoin nTime, and a TSA sim.

A TimestampProof binds a document digest to a public, unpredictable anchor:
a beacon pulse output (60 s or 30 s cadence), a bitcoin block's nTime field
(coarse, consensus-bounded drift), or a simulated TSA countersignature.
Anchors at or after the request instant are selected, so the proof reads
"the digest existed no later than anchor_time, within time_precision".

Beacon records follow a line-oriented text layout (Key:value lines, 64-column
wrapped hex, base64 certificate block). The record signature covers every
field except the signature itself and the output value, using the cipher
suite named in the record (suite 0 = SHA-512 hashing, RSA PKCS#1 v1.5).
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Optional, Sequence

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.x509.oid import NameOID

from .canonical import canonical_bytes, iso_instant_ms, parse_instant, sha256_hex
from .errors import (
    ProviderUnavailableError,
    PulseExhaustedError,
    RecordParseError,
    UnknownProviderError,
    UnknownSchemeError,
)
from .identity import KeyPair, sign_digest, verify_signature

CIPHER_SUITE_0_TEXT = "SHA512 hashing and RSA signatures with PKCSv1.5 padding"
SHA512_HEX_LEN = 128


class ProviderKind(str, Enum):
    SIMULATED_TSA = "SimulatedTSA"
    NIST_BEACON = "NistBeacon"
    DRAND = "Drand"
    BITCOIN_NTIME = "BitcoinNTime"


@dataclass(frozen=True)
class TimestampProof:
    provider: ProviderKind
    anchor_value: str
    anchor_time: datetime
    time_precision: int  # seconds
    uri: str
    stamped_digest: str

    def to_doc(self) -> dict:
        return {
            "provider": self.provider.value,
            "anchor_value": self.anchor_value,
            "anchor_time": iso_instant_ms(self.anchor_time),
            "time_precision": self.time_precision,
            "uri": self.uri,
            "stamped_digest": self.stamped_digest,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TimestampProof":
        return cls(
            provider=ProviderKind(doc["provider"]),
            anchor_value=doc["anchor_value"],
            anchor_time=parse_instant(doc["anchor_time"]),
            time_precision=int(doc["time_precision"]),
            uri=doc["uri"],
            stamped_digest=doc["stamped_digest"],
        )


# ---------------------------------------------------------------------------
# beacon pulse records


@dataclass(frozen=True)
class BeaconPulse:
    uri: str
    version: str
    cipher_suite: int
    period_ms: int
    certificate_b64: str
    chain_index: int
    pulse_index: int
    time: datetime
    local_random_value: str
    external_source_id: str
    external_status_code: int
    external_value: str
    previous_output: str
    list_hour: str
    list_day: str
    list_month: str
    list_year: str
    precommitment_value: str
    status_code: int
    signature_hex: str
    output_value: str


def pulse_signable(pulse: BeaconPulse) -> bytes:
    """Bytes the record authority signs: everything but signature and output."""
    return canonical_bytes(
        {
            "uri": pulse.uri,
            "version": pulse.version,
            "cipher_suite": pulse.cipher_suite,
            "period_ms": pulse.period_ms,
            "certificate": re.sub(r"\s+", "", pulse.certificate_b64),
            "chain_index": pulse.chain_index,
            "pulse_index": pulse.pulse_index,
            "time": iso_instant_ms(pulse.time),
            "local_random_value": pulse.local_random_value,
            "external_source_id": pulse.external_source_id,
            "external_status_code": pulse.external_status_code,
            "external_value": pulse.external_value,
            "previous_output": pulse.previous_output,
            "hour": pulse.list_hour,
            "day": pulse.list_day,
            "month": pulse.list_month,
            "year": pulse.list_year,
            "precommitment_value": pulse.precommitment_value,
            "status_code": pulse.status_code,
        }
    )


def verify_pulse_signature(pulse: BeaconPulse) -> bool:
    """Check the record signature against the certificate embedded in it."""
    if pulse.cipher_suite != 0:
        raise UnknownSchemeError(f"unsupported cipher suite {pulse.cipher_suite}")
    try:
        der = base64.b64decode(re.sub(r"\s+", "", pulse.certificate_b64), validate=True)
        certificate = x509.load_der_x509_certificate(der)
        signature = bytes.fromhex(pulse.signature_hex)
    except (ValueError, TypeError):
        return False
    public = certificate.public_key()
    if not isinstance(public, rsa.RSAPublicKey):
        return False
    try:
        public.verify(signature, pulse_signable(pulse), padding.PKCS1v15(), hashes.SHA512())
        return True
    except InvalidSignature:
        return False


# -- record text layout ------------------------------------------------------

_RECORD_KEYS = [
    "URI",
    "Version",
    "Cipher Suite",
    "Period",
    "Certificate Hash",
    "Chain Index",
    "Pulse Index",
    "Time",
    "Local Random Value",
    "External Source Id",
    "External Status Code",
    "External Value",
    "Previous Output",
    "Hour",
    "Day",
    "Month",
    "Year",
    "Precommitment Value",
    "Signature",
    "Output Value",
    "Status",
]

_KEY_RE = re.compile(r"^([A-Za-z ]+?)(?:\s*\(\d+\))?\s*:\s*(.*)$")


def _wrap(value: str, width: int = 64) -> str:
    return "\n".join(value[i : i + width] for i in range(0, len(value), width))


def render_beacon_record(pulse: BeaconPulse) -> str:
    lines = [
        f"URI: {pulse.uri}",
        f"Version: {pulse.version}",
        f"Cipher Suite:{pulse.cipher_suite}: {CIPHER_SUITE_0_TEXT}",
        f"Period:{pulse.period_ms} milliseconds",
        "Certificate Hash:",
        _wrap(re.sub(r"\s+", "", pulse.certificate_b64)),
        f"Chain Index:{pulse.chain_index}",
        f"Pulse Index:{pulse.pulse_index}",
        f"Time:{iso_instant_ms(pulse.time)}",
        "Local Random Value:",
        _wrap(pulse.local_random_value),
        "External Source Id:",
        _wrap(pulse.external_source_id),
        f"External Status Code:{pulse.external_status_code}",
        "External Value:",
        _wrap(pulse.external_value),
        "Previous Output:",
        _wrap(pulse.previous_output),
        "Hour:",
        _wrap(pulse.list_hour),
        "Day:",
        _wrap(pulse.list_day),
        "Month:",
        _wrap(pulse.list_month),
        "Year:",
        _wrap(pulse.list_year),
        "Precommitment Value:",
        _wrap(pulse.precommitment_value),
        "Signature:",
        _wrap(pulse.signature_hex),
        "Output Value:",
        _wrap(pulse.output_value),
        f"Status:{pulse.status_code}: Normal",
    ]
    return "\n".join(lines) + "\n"


def parse_beacon_record(text: str) -> BeaconPulse:
    """Parse the line-oriented record layout back into a pulse."""
    fields: dict[str, list[str]] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        match = _KEY_RE.match(line)
        key = match.group(1).strip() if match else None
        if key in _RECORD_KEYS:
            current = key
            fields.setdefault(key, [])
            rest = match.group(2).strip()
            if rest:
                fields[key].append(rest)
        elif current is not None:
            fields[current].append(line)
        else:
            raise RecordParseError(f"content before any field: {line[:40]!r}")

    def need(key: str) -> str:
        if key not in fields or not fields[key]:
            raise RecordParseError(f"missing field {key!r}")
        return "".join(fields[key])

    def need_int_prefix(key: str) -> int:
        value = need(key)
        match = re.match(r"^(\d+)", value)
        if not match:
            raise RecordParseError(f"field {key!r} is not numeric: {value[:20]!r}")
        return int(match.group(1))

    uri = need("URI").strip("<>")
    try:
        time = parse_instant(need("Time"))
    except ValueError as exc:
        raise RecordParseError(f"bad Time field: {exc}") from None
    return BeaconPulse(
        uri=uri,
        version=need("Version"),
        cipher_suite=need_int_prefix("Cipher Suite"),
        period_ms=need_int_prefix("Period"),
        certificate_b64=need("Certificate Hash"),
        chain_index=need_int_prefix("Chain Index"),
        pulse_index=need_int_prefix("Pulse Index"),
        time=time,
        local_random_value=need("Local Random Value"),
        external_source_id=need("External Source Id"),
        external_status_code=need_int_prefix("External Status Code"),
        external_value=need("External Value"),
        previous_output=need("Previous Output"),
        list_hour=need("Hour"),
        list_day=need("Day"),
        list_month=need("Month"),
        list_year=need("Year"),
        precommitment_value=need("Precommitment Value"),
        status_code=need_int_prefix("Status"),
        signature_hex=need("Signature"),
        output_value=need("Output Value"),
    )


# -- pulse selection ---------------------------------------------------------


def select_pulse_after(pulses: Sequence[BeaconPulse], t: datetime) -> BeaconPulse:
    """Earliest pulse whose time is at or after t."""
    best: Optional[BeaconPulse] = None
    for pulse in pulses:
        if pulse.time >= t and (best is None or pulse.time < best.time):
            best = pulse
    if best is None:
        raise PulseExhaustedError(f"no pulse at or after {iso_instant_ms(t)}")
    return best


# ---------------------------------------------------------------------------
# chain generation (simulated authorities)


def make_authority_certificate(keypair: KeyPair, common_name: str) -> str:
    """Self-signed certificate for a simulated record authority, base64 DER."""
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    certificate = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(keypair.public_key())
        .serial_number(0x0DDC0FFEE)
        .not_valid_before(datetime(2020, 1, 1, tzinfo=timezone.utc))
        .not_valid_after(datetime(2040, 1, 1, tzinfo=timezone.utc))
        .sign(keypair.private_key, hashes.SHA256())
    )
    der = certificate.public_bytes(serialization.Encoding.DER)
    return base64.b64encode(der).decode("ascii")


def _sha512_hex(data: bytes) -> str:
    return hashlib.sha512(data).hexdigest().upper()


def generate_beacon_chain(
    kind: ProviderKind,
    authority: KeyPair,
    certificate_b64: str,
    start: datetime,
    count: int,
    chain_index: int = 1,
    first_pulse_index: int = 1,
    seed: bytes = b"beacon-sim",
) -> list[BeaconPulse]:
    """Deterministic pulse chain: previous_output links, precommitments honored."""
    if kind is ProviderKind.NIST_BEACON:
        period_ms, scheme = 60_000, "nist"
        uri_base = f"https://beacon.nist.gov/beacon/2.0/chain/{chain_index}/pulse"
    elif kind is ProviderKind.DRAND:
        period_ms, scheme = 30_000, "drand"
        uri_base = f"drand://chain/{chain_index}/round"
    else:
        raise UnknownProviderError(f"{kind.value} is not a beacon")

    locals_: list[str] = [
        _sha512_hex(seed + f":{scheme}:{chain_index}:{first_pulse_index + i}:local".encode())
        for i in range(count + 1)
    ]
    pulses: list[BeaconPulse] = []
    previous = "00" * 64
    for i in range(count):
        index = first_pulse_index + i
        body = BeaconPulse(
            uri=f"{uri_base}/{index}",
            version="Version 2.0",
            cipher_suite=0,
            period_ms=period_ms,
            certificate_b64=certificate_b64,
            chain_index=chain_index,
            pulse_index=index,
            time=start + timedelta(milliseconds=period_ms * i),
            local_random_value=locals_[i],
            external_source_id="00" * 32,
            external_status_code=0,
            external_value="00" * 64,
            previous_output=previous,
            list_hour="00" * 64,
            list_day="00" * 64,
            list_month="00" * 64,
            list_year="00" * 64,
            precommitment_value=_sha512_hex(bytes.fromhex(locals_[i + 1])),
            status_code=0,
            signature_hex="",
            output_value="",
        )
        signature = sign_pulse(body, authority)
        output = _sha512_hex(bytes.fromhex(signature))
        pulse = replace(body, signature_hex=signature, output_value=output)
        pulses.append(pulse)
        previous = output
    return pulses


def sign_pulse(pulse: BeaconPulse, authority: KeyPair) -> str:
    """Cipher-suite-0 signature (SHA-512, PKCS#1 v1.5) over the signable bytes."""
    raw = authority.private_key.sign(
        pulse_signable(pulse), padding.PKCS1v15(), hashes.SHA512()
    )
    return raw.hex().upper()


# ---------------------------------------------------------------------------
# bitcoin header anchors


@dataclass(frozen=True)
class BtcHeaderAnchor:
    block_height: int
    ntime: datetime
    block_hash: str

    def to_doc(self) -> dict:
        return {
            "block_height": self.block_height,
            "ntime": iso_instant_ms(self.ntime),
            "block_hash": self.block_hash,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BtcHeaderAnchor":
        return cls(
            block_height=int(doc["block_height"]),
            ntime=parse_instant(doc["ntime"]),
            block_hash=doc["block_hash"],
        )


# ---------------------------------------------------------------------------
# providers


NTIME_DRIFT_BOUND = 7200  # consensus tolerance on header times, seconds


class SimulatedTsaProvider:
    """Countersigning TSA: proof is the TSA's signature over digest and time."""

    kind = ProviderKind.SIMULATED_TSA

    def __init__(self, keypair: KeyPair):
        self._keypair = keypair

    def _payload(self, digest_hex: str, t: datetime) -> bytes:
        return canonical_bytes({"digest": digest_hex, "time": iso_instant_ms(t)})

    def stamp(self, digest_hex: str, t: datetime) -> TimestampProof:
        bundle = sign_digest(self._keypair, self._payload(digest_hex, t))
        return TimestampProof(
            provider=self.kind,
            anchor_value=bundle.signature,
            anchor_time=t,
            time_precision=1,
            uri=f"tsa://simulated/{self._keypair.key_id[:16]}",
            stamped_digest=digest_hex,
        )

    def verify(self, proof: TimestampProof, digest_hex: str, public_key=None) -> bool:
        if proof.stamped_digest != digest_hex:
            return False
        payload = self._payload(digest_hex, proof.anchor_time)
        try:
            signature = bytes.fromhex(proof.anchor_value)
        except ValueError:
            return False
        key = public_key or self._keypair.public_key()
        try:
            key.verify(signature, payload, padding.PKCS1v15(), hashes.SHA256())
            return True
        except InvalidSignature:
            return False


class BeaconProvider:
    """Pulse-chain provider; NIST cadence 60 s, drand cadence 30 s."""

    def __init__(self, kind: ProviderKind, pulses: Sequence[BeaconPulse]):
        if kind not in (ProviderKind.NIST_BEACON, ProviderKind.DRAND):
            raise UnknownProviderError(f"{kind.value} is not a beacon kind")
        self.kind = kind
        self._pulses = list(pulses)
        self._by_uri = {p.uri: p for p in self._pulses}

    @property
    def pulses(self) -> list[BeaconPulse]:
        return list(self._pulses)

    def stamp(self, digest_hex: str, t: datetime) -> TimestampProof:
        if not self._pulses:
            raise ProviderUnavailableError(f"{self.kind.value} has no pulses")
        pulse = select_pulse_after(self._pulses, t)
        period_s = pulse.period_ms // 1000
        gap = int((pulse.time - t).total_seconds())
        return TimestampProof(
            provider=self.kind,
            anchor_value=pulse.output_value,
            anchor_time=pulse.time,
            time_precision=max(period_s, gap),
            uri=pulse.uri,
            stamped_digest=digest_hex,
        )

    def verify(self, proof: TimestampProof, digest_hex: str, public_key=None) -> bool:
        if proof.stamped_digest != digest_hex:
            return False
        pulse = self._by_uri.get(proof.uri)
        if pulse is None:
            return False
        if proof.anchor_value != pulse.output_value:
            return False
        if proof.anchor_time != pulse.time:
            return False
        return verify_pulse_signature(pulse)


class BitcoinNTimeProvider:
    """Header-based provider: anchor is a block hash, time is its nTime field."""

    kind = ProviderKind.BITCOIN_NTIME

    def __init__(self, headers: Sequence[BtcHeaderAnchor]):
        self._headers = sorted(headers, key=lambda h: (h.ntime, h.block_height))
        self._by_height = {h.block_height: h for h in self._headers}

    @property
    def headers(self) -> list[BtcHeaderAnchor]:
        return list(self._headers)

    def stamp(self, digest_hex: str, t: datetime) -> TimestampProof:
        if not self._headers:
            raise ProviderUnavailableError("no headers loaded")
        chosen: Optional[BtcHeaderAnchor] = None
        for header in self._headers:
            if header.ntime >= t:
                chosen = header
                break
        if chosen is None:
            raise PulseExhaustedError(f"no header at or after {iso_instant_ms(t)}")
        gap = int((chosen.ntime - t).total_seconds())
        return TimestampProof(
            provider=self.kind,
            anchor_value=chosen.block_hash,
            anchor_time=chosen.ntime,
            time_precision=max(NTIME_DRIFT_BOUND, gap),
            uri=f"btc://block/{chosen.block_height}",
            stamped_digest=digest_hex,
        )

    def verify(self, proof: TimestampProof, digest_hex: str, public_key=None) -> bool:
        if proof.stamped_digest != digest_hex:
            return False
        match = re.match(r"^btc://block/(\d+)$", proof.uri)
        if not match:
            return False
        header = self._by_height.get(int(match.group(1)))
        if header is None:
            return False
        if len(proof.anchor_value) != 64 or not re.fullmatch(r"[0-9a-f]{64}", proof.anchor_value):
            return False
        return proof.anchor_value == header.block_hash and proof.anchor_time == header.ntime


# ---------------------------------------------------------------------------
# service facade


class TimestampService:
    def __init__(self):
        self._providers: dict[ProviderKind, object] = {}

    def register(self, provider) -> None:
        self._providers[provider.kind] = provider

    def provider(self, kind: ProviderKind):
        try:
            return self._providers[kind]
        except KeyError:
            raise UnknownProviderError(f"no provider registered for {kind.value}") from None

    def request_timestamp(
        self, digest_hex: str, kind: ProviderKind, now: datetime
    ) -> TimestampProof:
        return self.provider(kind).stamp(digest_hex, now)

    def verify_timestamp(
        self, proof: TimestampProof, digest_hex: str, provider_public_key=None
    ) -> bool:
        return self.provider(proof.provider).verify(proof, digest_hex, provider_public_key)


def request_timestamp(
    service: TimestampService, digest_hex: str, kind: ProviderKind, now: datetime
) -> TimestampProof:
    return service.request_timestamp(digest_hex, kind, now)


def verify_timestamp(
    service: TimestampService,
    proof: TimestampProof,
    digest_hex: str,
    provider_public_key=None,
) -> bool:
    return service.verify_timestamp(proof, digest_hex, provider_public_key)
