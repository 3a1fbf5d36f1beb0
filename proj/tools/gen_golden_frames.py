#!/usr/bin/env python3
"""Writes the golden frame fixtures under tests/fixtures/.

Built from the byte layout in PROTOCOL.md using only struct, zlib and hmac,
so the fixtures do not depend on the C++ encoder they are used to check.

    python3 tools/gen_golden_frames.py            # rewrite fixtures
    python3 tools/gen_golden_frames.py --check    # verify committed fixtures
"""

import argparse
import hashlib
import hmac
import json
import pathlib
import struct
import sys
import uuid
import zlib
from decimal import ROUND_HALF_UP, Decimal

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

GOLDEN = [
    {
        "name": "golden_frame_1",
        "key": bytes(range(32)),
        "flags": 0x00,
        "reading": {
            "node_id": "3f2a9c4e-8b1d-4e7a-9c3b-5d6e7f8a9b0c",
            "seq": 1,
            "timestamp_ms": 1700000000000,
            "flow_lpm": 15.0,
            "echo_time_us": 4664,
            "gas_ppm": 30.0,
            "lat_deg": 23.8103,
            "lon_deg": 90.4125,
        },
    },
    {
        "name": "golden_frame_2",
        "key": bytes([0xA5] * 32),
        "flags": 0x01,
        "reading": {
            "node_id": "c0ffee00-1234-4abc-8def-0123456789ab",
            "seq": 4294967295,
            "timestamp_ms": 1760000000123,
            "flow_lpm": 2.5,
            "echo_time_us": 1166,
            "gas_ppm": 412.3,
            "lat_deg": -6.2087634,
            "lon_deg": -106.845599,
        },
    },
]


def half_up(value, scale):
    return int((Decimal(repr(value)) * scale).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def frame(reading, key, flags):
    head = bytes([0x57, 0x4C, 0x01, flags])
    head += uuid.UUID(reading["node_id"]).bytes
    head += struct.pack(">I", reading["seq"])
    head += struct.pack(">Q", reading["timestamp_ms"])
    head += struct.pack(">I", half_up(reading["flow_lpm"], 1000))
    head += struct.pack(">I", half_up(reading["echo_time_us"], 1))
    head += struct.pack(">H", half_up(reading["gas_ppm"], 10))
    head += struct.pack(">i", half_up(reading["lat_deg"], 10**7))
    head += struct.pack(">i", half_up(reading["lon_deg"], 10**7))
    assert len(head) == 50
    head += struct.pack(">I", zlib.crc32(head) & 0xFFFFFFFF)
    tag = hmac.new(key, head, hashlib.sha256).digest()[:16]
    out = head + tag
    assert len(out) == 70
    return out


def decoded(reading):
    # What a receiver recovers: every field at wire precision.
    r = dict(reading)
    r["flow_lpm"] = half_up(reading["flow_lpm"], 1000) / 1000
    r["echo_time_us"] = float(half_up(reading["echo_time_us"], 1))
    r["gas_ppm"] = half_up(reading["gas_ppm"], 10) / 10
    r["lat_deg"] = half_up(reading["lat_deg"], 10**7) / 1e7
    r["lon_deg"] = half_up(reading["lon_deg"], 10**7) / 1e7
    return r


def outputs():
    for g in GOLDEN:
        f = frame(g["reading"], g["key"], g["flags"])
        yield f"{g['name']}.hex", f.hex() + "\n"
        yield f"{g['name']}.key", g["key"].hex() + "\n"
        yield f"{g['name']}.json", json.dumps(decoded(g["reading"]), indent=2) + "\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    FIXTURES.mkdir(parents=True, exist_ok=True)
    stale = []
    for name, text in outputs():
        path = FIXTURES / name
        if args.check:
            if not path.exists() or path.read_text() != text:
                stale.append(name)
        else:
            path.write_text(text)
    if stale:
        print("out of date: " + ", ".join(stale), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
