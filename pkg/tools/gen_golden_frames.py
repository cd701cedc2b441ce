#!/usr/bin/env python3
"""Regenerate the golden wire-frame fixtures under fixtures/golden/.

The fixtures pin the byte-exact wire contract; run this only when the wire
format itself is deliberately changed, and review the diff.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from modelsink import wire  # noqa: E402

KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
RURAL = bytes.fromhex("ab0000000000000000000000000000a1")
CENTER = bytes.fromhex("ab0000000000000000000000000000c1")

FRAMES = {
    "ping.hex": wire.ping_message(bytes(16), 0),
    "event.hex": wire.event_message(
        RURAL, 7, 1700000000000, "ev_tpa_recommended", "GeneralAssessment"),
    "poll_resp_2rec.hex": wire.poll_response(
        CENTER, 1700000000500,
        (wire.EventRecord("ev_begin_tpa", "GeneralAssessment", RURAL, 7),
         wire.EventRecord("ev_status_ack", "", RURAL, 8))),
}


def main() -> None:
    out_dir = Path(__file__).resolve().parents[1] / "fixtures" / "golden"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, msg in FRAMES.items():
        frame = wire.encode_frame(msg, KEY)
        path = out_dir / name
        path.write_text(frame.hex() + "\n")
        print(f"wrote {path} ({len(frame)} bytes)")


if __name__ == "__main__":
    main()
