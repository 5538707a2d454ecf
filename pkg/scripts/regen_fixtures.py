#!/usr/bin/env python3
"""Regenerate the committed fixture files under src/oconsent/fixtures/.

Deterministic: the record authority key is derived from a fixed seed, so
reruns produce byte-identical output. The pulse record keeps the published
beacon field values for chain 1 / pulse 1084642; only the certificate and
signature are locally issued (the published blobs are not recoverable), so
the signature verifies against the certificate embedded in the record.
"""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from oconsent.identity import generate_keypair  # noqa: E402
from oconsent.timestamp import (  # noqa: E402
    BeaconPulse,
    BtcHeaderAnchor,
    make_authority_certificate,
    render_beacon_record,
    sign_pulse,
)

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "oconsent" / "fixtures"

AUTHORITY_SEED = b"oconsent-fixture-authority-v1"

PULSE_VALUES = {
    "uri": "https://beacon.nist.gov/beacon/2.0/chain/1/pulse/1084642",
    "version": "Version 2.0",
    "cipher_suite": 0,
    "period_ms": 60_000,
    "chain_index": 1,
    "pulse_index": 1_084_642,
    "time": datetime(2020, 9, 28, 15, 25, tzinfo=timezone.utc),
    "local_random_value": (
        "A30D170D360FE8855BD7354D3FA7DB654FC104AE3A718433DE6155C0CAC1DFB1"
        "FC778D652D673D9FDC3586552E9647977F477AF3908ABA071C02B87ECD818246"
    ),
    "external_source_id": "00" * 32,
    "external_status_code": 0,
    "external_value": "00" * 64,
    "previous_output": (
        "5E02533A3855EF95F219A9F4017AB5B61AC9CF2289F540FCEA9505E5EA1D23D6"
        "498DC3ECC0C72E635211BE73673A79C42BEBAB41068EE97F0E2FC1538E17A07A"
    ),
    "list_hour": (
        "032D94B38419AB4071F8907A0C877707CA01C32705196B4A5173F909A266D2D0"
        "BCBD656E03CF9668E0F58F74B754A3B454A2E104388A10A689CAF73EE5506BB0"
    ),
    "list_day": (
        "2875F7EEA2B7AF715C8B0F077E18D40374C8CE8467775F8ED6BC7D19C4BC065E"
        "D51BE211E24111EA1C09F7124361DD39F57157C57550D6FE736C075E7EAE3E89"
    ),
    "list_month": (
        "55D5ABD00219290BF41190092C90E7DB429A80A468D4F6A643C1F09357FE820E"
        "C664A411D71A49E8680F78C5D962DC3EAF68A9F4031C29866E5D4468BB2C0F18"
    ),
    "list_year": (
        "CBC9AA97CDD5954218C585C89B061F356EF5F4158622C7CB38FBC317CA69C7AB"
        "E9E4379D4738B1076F7671C916C78AD0167A9ADB5A53E0CB20CC7F3D38736857"
    ),
    "precommitment_value": (
        "4E85EFADB2E0B74D53EC7062B9342C3477F1AFD8EBD7FEB58D16ADCDFEA67D37"
        "F0F862C4B27B79063EDA7869437EB910396057AFBF298777937E59DA3ADC0F5D"
    ),
    "status_code": 0,
    "output_value": (
        "CCDDD16135C36C673237328ECE38D01A3E1DAC817BB7005237088FA10502B6B1"
        "86291AD6059B09BC2B5B7744AA135BFDAB89FBE0E11E8FA1C99A665FB41CDF5B"
    ),
}

BTC_HEIGHT = 659_792
BTC_HASH = "00000000000000000000aa23344fcefaafa535d40f3f6185aa71c05f361a5006"
BTC_NTIME = datetime(2020, 12, 4, 0, 57, tzinfo=timezone.utc)


def synthetic_btc_hash(height: int) -> str:
    tail = hashlib.sha256(f"btc-header-sim:{height}".encode()).hexdigest()[:44]
    return "0" * 20 + tail


def main() -> None:
    authority = generate_keypair(AUTHORITY_SEED)
    certificate = make_authority_certificate(authority, "beacon-record-fixture-authority")

    body = BeaconPulse(
        certificate_b64=certificate, signature_hex="", **PULSE_VALUES
    )
    signature = sign_pulse(body, authority)
    pulse = BeaconPulse(
        certificate_b64=certificate,
        signature_hex=signature,
        **PULSE_VALUES,
    )

    beacons = FIXTURES / "beacons"
    beacons.mkdir(parents=True, exist_ok=True)
    record_path = beacons / "nist_chain1_pulse1084642.txt"
    record_path.write_text(render_beacon_record(pulse))
    print(f"wrote {record_path}")

    headers = []
    for height in range(BTC_HEIGHT - 2, BTC_HEIGHT + 3):
        if height == BTC_HEIGHT:
            anchor = BtcHeaderAnchor(height, BTC_NTIME, BTC_HASH)
        else:
            anchor = BtcHeaderAnchor(
                height,
                BTC_NTIME + timedelta(seconds=600 * (height - BTC_HEIGHT)),
                synthetic_btc_hash(height),
            )
        headers.append(anchor.to_doc())
    headers_path = beacons / "btc_headers.json"
    headers_path.write_text(json.dumps(headers, indent=2) + "\n")
    print(f"wrote {headers_path}")


if __name__ == "__main__":
    main()
