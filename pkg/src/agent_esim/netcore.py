"""Home-network authentication authority.

Holds the operator-side subscriber database, issues fresh authentication
vectors, confirms challenge responses, and processes resynchronization
tokens. Shares key material with the vault by construction (one operator
runs both) but keeps its own store so the two protocol roles stay honest.

Sequence numbers advance by a fixed step per vector; challenges are
single-use and expire after a configurable TTL.
"""

from __future__ import annotations

import hmac
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import (
    ChallengeExpired,
    DuplicateSubscriber,
    InvalidImsi,
    ResyncMacFailure,
    UnknownChallenge,
    UnknownSubscriber,
)
from .milenage import (
    Auts,
    MilenageKeyMaterial,
    SQN_MAX,
    generate_auth_vector,
    verify_auts,
)
from .recordlog import RecordLog

NETCORE_HEADER = "AESIM-NETCORE/1"

DEFAULT_AMF = b"\x80\x00"
DEFAULT_CHALLENGE_TTL = 60.0
DEFAULT_SQN_STEP = 1


@dataclass
class SubscriberRecord:
    imsi: str
    key_material: MilenageKeyMaterial
    sqn_he: int = 0
    amf: bytes = DEFAULT_AMF


@dataclass(frozen=True)
class PendingChallenge:
    challenge_id: str
    imsi: str
    rand: bytes
    xres: bytes
    issued_at: float
    expires_at: float


class NetworkCore:
    def __init__(
        self,
        state_dir: str | Path,
        *,
        sqn_step: int = DEFAULT_SQN_STEP,
        challenge_ttl: float = DEFAULT_CHALLENGE_TTL,
        clock: Callable[[], float] = time.time,
        sync: bool = True,
    ):
        if sqn_step < 1:
            raise ValueError("sqn_step must be >= 1")
        self.sqn_step = sqn_step
        self.challenge_ttl = challenge_ttl
        self.clock = clock
        self._log = RecordLog(Path(state_dir) / "netcore.log", NETCORE_HEADER, sync=sync)
        self._subscribers: dict[str, SubscriberRecord] = {}
        self._pending: dict[str, PendingChallenge] = {}
        self._lock = threading.Lock()
        self._replay()

    def _replay(self) -> None:
        for rec in self._log.records():
            kind = rec["type"]
            if kind == "subscriber":
                self._subscribers[rec["imsi"]] = SubscriberRecord(
                    imsi=rec["imsi"],
                    key_material=MilenageKeyMaterial(
                        k=bytes.fromhex(rec["k"]), opc=bytes.fromhex(rec["opc"])
                    ),
                    sqn_he=int(rec["sqn_he"]),
                    amf=bytes.fromhex(rec["amf"]),
                )
            elif kind == "sqn":
                self._subscribers[rec["imsi"]].sqn_he = int(rec["sqn_he"])
            elif kind == "challenge":
                self._pending[rec["challenge_id"]] = PendingChallenge(
                    challenge_id=rec["challenge_id"],
                    imsi=rec["imsi"],
                    rand=bytes.fromhex(rec["rand"]),
                    xres=bytes.fromhex(rec["xres"]),
                    issued_at=rec["issued_at"],
                    expires_at=rec["expires_at"],
                )
            elif kind == "challenge_consumed":
                self._pending.pop(rec["challenge_id"], None)

    def _require(self, imsi: str) -> SubscriberRecord:
        sub = self._subscribers.get(imsi)
        if sub is None:
            raise UnknownSubscriber(f"no subscriber for imsi {imsi}")
        return sub

    def register_subscriber(
        self, imsi: str, key_material: MilenageKeyMaterial, *, amf: bytes = DEFAULT_AMF
    ) -> None:
        if not (isinstance(imsi, str) and imsi.isdigit() and len(imsi) == 15):
            raise InvalidImsi(f"imsi must be 15 decimal digits, got {imsi!r}")
        with self._lock:
            if imsi in self._subscribers:
                raise DuplicateSubscriber(f"imsi already registered: {imsi}")
            sub = SubscriberRecord(imsi=imsi, key_material=key_material, amf=amf)
            self._log.append(
                {
                    "type": "subscriber",
                    "imsi": imsi,
                    "k": key_material.k.hex(),
                    "opc": key_material.opc.hex(),
                    "sqn_he": 0,
                    "amf": amf.hex(),
                }
            )
            self._subscribers[imsi] = sub

    def generate_challenge(self, imsi: str) -> dict:
        """Issue a fresh (challenge_id, rand, autn) for delivery to the agent."""
        with self._lock:
            sub = self._require(imsi)
            if sub.sqn_he + self.sqn_step > SQN_MAX:
                raise ResyncMacFailure("sqn space exhausted")  # pragma: no cover
            sub.sqn_he += self.sqn_step
            rand = secrets.token_bytes(16)
            vector = generate_auth_vector(sub.key_material, rand, sub.sqn_he, sub.amf)
            now = self.clock()
            challenge = PendingChallenge(
                challenge_id=secrets.token_hex(16),
                imsi=imsi,
                rand=rand,
                xres=vector.xres,
                issued_at=now,
                expires_at=now + self.challenge_ttl,
            )
            self._log.append({"type": "sqn", "imsi": imsi, "sqn_he": sub.sqn_he})
            self._log.append(
                {
                    "type": "challenge",
                    "challenge_id": challenge.challenge_id,
                    "imsi": imsi,
                    "rand": rand.hex(),
                    "xres": vector.xres.hex(),
                    "issued_at": challenge.issued_at,
                    "expires_at": challenge.expires_at,
                }
            )
            self._pending[challenge.challenge_id] = challenge
            return {
                "challenge_id": challenge.challenge_id,
                "rand": rand,
                "autn": vector.autn,
            }

    def confirm_res(self, challenge_id: str, res: bytes) -> bool:
        """True iff `res` matches the retained XRES; challenge consumed either way."""
        with self._lock:
            challenge = self._pending.get(challenge_id)
            if challenge is None:
                raise UnknownChallenge(f"no pending challenge {challenge_id}")
            self._log.append({"type": "challenge_consumed", "challenge_id": challenge_id})
            del self._pending[challenge_id]
            if self.clock() > challenge.expires_at:
                raise ChallengeExpired(f"challenge {challenge_id} expired")
            return hmac.compare_digest(res, challenge.xres)

    def resynchronize(self, imsi: str, rand: bytes, auts: Auts) -> None:
        """Adopt the subscriber's reported SQN so the next vector is fresh."""
        with self._lock:
            sub = self._require(imsi)
            sqn_ms = verify_auts(sub.key_material, rand, auts)
            if sqn_ms is None:
                raise ResyncMacFailure(f"auts mac_s invalid for imsi {imsi}")
            sub.sqn_he = sqn_ms + self.sqn_step
            self._log.append({"type": "sqn", "imsi": imsi, "sqn_he": sub.sqn_he})

    def expire_stale_challenges(self) -> int:
        """Drop challenges past their TTL; returns how many were removed."""
        now = self.clock()
        removed = 0
        with self._lock:
            for cid in [c.challenge_id for c in self._pending.values() if now > c.expires_at]:
                self._log.append({"type": "challenge_consumed", "challenge_id": cid})
                del self._pending[cid]
                removed += 1
        return removed

    def subscriber_sqn(self, imsi: str) -> int:
        with self._lock:
            return self._require(imsi).sqn_he

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def close(self) -> None:
        self._log.close()
