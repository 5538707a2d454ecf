"""Packaged fixture data: beacon records and bitcoin header anchors."""

from __future__ import annotations

import json
from importlib.resources import files

from ..timestamp import BeaconPulse, BtcHeaderAnchor, parse_beacon_record

NIST_RECORD_NAME = "nist_chain1_pulse1084642.txt"


def load_beacon_record(name: str = NIST_RECORD_NAME) -> BeaconPulse:
    text = files(__package__).joinpath("beacons", name).read_text()
    return parse_beacon_record(text)


def load_beacon_record_text(name: str = NIST_RECORD_NAME) -> str:
    return files(__package__).joinpath("beacons", name).read_text()


def load_btc_headers() -> list[BtcHeaderAnchor]:
    raw = files(__package__).joinpath("beacons", "btc_headers.json").read_text()
    return [BtcHeaderAnchor.from_doc(doc) for doc in json.loads(raw)]
