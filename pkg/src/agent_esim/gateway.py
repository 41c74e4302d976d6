"""Identity gateway: the only path from agents to the vault.

Every identity operation runs a fixed decision pipeline under a
per-profile mutex:

    1. ProfileState      profile exists and is Active
    2. Attestation       token present, root registered, signature valid,
                         inside validity window
    3. PolicyValidity    now within the policy's validity window
    4. OpPermission      operation allowed by the policy
    5. CidrScope         source address inside the allowlist (empty = any)
    6. MeasurementMatch  token measurement bound to the profile and, when
                         the policy pins measurements, listed there
    7. RateLimit         sliding-window budget; only spent when 1-6 passed

The first failing check is the deny reason. One audit record is appended
for every response — allow, deny, or error — before that response is
released; if the append fails the request fails closed. Status is
read-only: it bypasses the pipeline, is exempt from rate limiting, and is
still audited.

The per-profile mutex is also taken by revocation and policy updates, so
rate-limit exactness holds under concurrency and no allow can be admitted
after a revocation returns (the linearization point is the vault state
write under that mutex).
"""

from __future__ import annotations

import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable

from .attestation import AttestationToken, RootRegistry, verify_token_integrity
from .audit import AuditLog, AuditOperation, AuditOutcome, ChainStatus
from .errors import (
    AgentEsimError,
    GatewayDenied,
    InvalidPolicy,
    InvalidProfile,
    MalformedRequest,
    StorageFailure,
    UnknownProfile,
    VaultError,
)
from .identifiers import IdentifierAllocator
from .milenage import MilenageKeyMaterial, derive_opc
from .netcore import NetworkCore
from .policy import (
    DelegationPolicy,
    DenyReason,
    GatewayOp,
    PolicyStore,
    SlidingWindowRateLimiter,
    enforce_policy,
)
from .vault import (
    AkaOutcome,
    AkaSuccess,
    AkaSyncFailure,
    BindingMetadata,
    ProfileState,
    SimVault,
    new_profile,
)
from .wire import request_digest

_LIFECYCLE_TARGETS = {
    "suspend": ProfileState.SUSPENDED,
    "resume": ProfileState.ACTIVE,
    "revoke": ProfileState.REVOKED,
}


@dataclass(frozen=True)
class ProvisionRequest:
    agent_public_key: bytes
    expected_measurements: frozenset[bytes]
    enterprise_namespace: str
    initial_policy: DelegationPolicy | None = None
    manifest_digest: bytes | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "expected_measurements", frozenset(self.expected_measurements)
        )
        if not self.expected_measurements:
            raise InvalidProfile(
                "expected_measurements", "at least one measurement required"
            )
        for m in self.expected_measurements:
            if len(m) != 32:
                raise InvalidProfile(
                    "expected_measurements", "measurements must be 32 bytes"
                )
        if self.manifest_digest is not None and len(self.manifest_digest) != 32:
            raise InvalidProfile("manifest_digest", "manifest digest must be 32 bytes")


class IdentityGateway:
    def __init__(
        self,
        vault: SimVault,
        netcore: NetworkCore,
        policy_store: PolicyStore,
        audit_log: AuditLog,
        roots: RootRegistry,
        *,
        allocator: IdentifierAllocator | None = None,
        default_policy: DelegationPolicy | None = None,
        operator_op: bytes | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.vault = vault
        self.netcore = netcore
        self.policies = policy_store
        self.audit = audit_log
        self.roots = roots
        self.allocator = allocator
        self.default_policy = default_policy
        self.operator_op = operator_op
        self.clock = clock
        self.rate_limiter = SlidingWindowRateLimiter()
        self._pipeline_locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()

    # -- plumbing --------------------------------------------------------------

    def _lock_for(self, profile_id: str) -> threading.RLock:
        with self._locks_guard:
            lock = self._pipeline_locks.get(profile_id)
            if lock is None:
                lock = self._pipeline_locks[profile_id] = threading.RLock()
            return lock

    def _policy_for(self, profile_id: str) -> DelegationPolicy:
        try:
            return self.policies.get(profile_id)
        except UnknownProfile:
            if self.default_policy is not None:
                return self.default_policy
            raise

    def _audit(
        self,
        profile_id: str,
        operation: AuditOperation,
        outcome: AuditOutcome,
        digest: bytes,
    ) -> None:
        self.audit.append(profile_id, operation, outcome, digest)

    def _run_pipeline(
        self,
        op: GatewayOp,
        profile_id: str,
        attestation: AttestationToken | None,
        source_address: str,
    ) -> None:
        """Checks 1-7; raises GatewayDenied at the first failure."""
        now = self.clock()
        state = self.vault.get_state(profile_id)  # UnknownProfile propagates
        if state is not ProfileState.ACTIVE:
            raise GatewayDenied(DenyReason.PROFILE_STATE)
        if attestation is None or verify_token_integrity(
            attestation, self.roots, now
        ) is not None:
            raise GatewayDenied(DenyReason.ATTESTATION)
        binding = self.vault.get_binding(profile_id)
        policy = self._policy_for(profile_id)
        decision = enforce_policy(
            policy,
            op,
            source_address,
            now,
            self.rate_limiter.state_for(profile_id),
            measurement=attestation.measurement,
            binding_measurements=binding.expected_measurements,
        )
        if not decision.allowed:
            raise GatewayDenied(decision.reason, retry_after=decision.retry_after)

    def _mediate(
        self,
        op: GatewayOp,
        audit_op: AuditOperation,
        profile_id: str,
        digest: bytes,
        attestation: AttestationToken | None,
        source_address: str,
        execute: Callable[[], tuple[object, str | None]],
    ):
        """Run pipeline + vault call + audit under the profile mutex.

        `execute` returns (result, audit_detail). Exactly one audit record is
        appended before anything is returned or raised.
        """
        with self._lock_for(profile_id):
            try:
                self._run_pipeline(op, profile_id, attestation, source_address)
                result, detail = execute()
            except GatewayDenied as denial:
                self._audit(
                    profile_id, audit_op, AuditOutcome.denied(denial.reason.value), digest
                )
                raise
            except StorageFailure:
                raise  # fail closed; nothing more we can durably record
            except AgentEsimError as err:
                self._audit(
                    profile_id, audit_op, AuditOutcome.error(type(err).__name__), digest
                )
                raise
            except Exception as err:
                self._audit(profile_id, audit_op, AuditOutcome.error("VaultError"), digest)
                raise VaultError(f"internal failure during {audit_op.value}") from err
            self._audit(profile_id, audit_op, AuditOutcome.allowed(detail), digest)
            return result

    # -- identity endpoints ------------------------------------------------------

    def handle_sign(
        self,
        profile_id: str,
        payload_digest: bytes,
        attestation: AttestationToken | None,
        source_address: str,
    ) -> dict:
        if len(payload_digest) != 32:
            raise MalformedRequest("payload_digest must be 32 bytes")
        digest = request_digest("sign", profile_id, {"payload_digest": payload_digest})

        def execute():
            return self.vault.usim_sign(profile_id, payload_digest), None

        return self._mediate(
            GatewayOp.SIGN, AuditOperation.SIGN, profile_id, digest,
            attestation, source_address, execute,
        )

    def handle_authenticate(
        self,
        profile_id: str,
        rand: bytes,
        autn: bytes,
        attestation: AttestationToken | None,
        source_address: str,
    ) -> AkaOutcome:
        if len(rand) != 16 or len(autn) != 16:
            raise MalformedRequest("rand and autn must be 16 bytes")
        digest = request_digest(
            "authenticate", profile_id, {"rand": rand, "autn": autn}
        )

        def execute():
            outcome = self.vault.usim_authenticate(profile_id, rand, autn)
            if isinstance(outcome, AkaSuccess):
                detail = "success"
            elif isinstance(outcome, AkaSyncFailure):
                detail = "sync_failure"
            else:
                detail = "mac_failure"
            return outcome, detail

        return self._mediate(
            GatewayOp.AUTHENTICATE, AuditOperation.AUTHENTICATE, profile_id, digest,
            attestation, source_address, execute,
        )

    def handle_status(
        self,
        profile_id: str,
        attestation: AttestationToken | None = None,
        source_address: str = "",
    ) -> dict:
        """Read-only; bypasses the pipeline and never spends rate budget."""
        digest = request_digest("status", profile_id, {})
        try:
            status = self.vault.get_profile_status(profile_id)
        except UnknownProfile:
            self._audit(
                profile_id, AuditOperation.STATUS,
                AuditOutcome.error("UnknownProfile"), digest,
            )
            raise
        now = self.clock()
        try:
            policy = self._policy_for(profile_id)
        except UnknownProfile:
            policy = None
        status["bound"] = status["state"] == ProfileState.ACTIVE.value
        if policy is not None:
            status["policy"] = policy.to_json()
            status["rate_limit_headroom"] = self.rate_limiter.headroom(
                profile_id, policy.rate_limit, now
            )
        if attestation is not None:
            status["attestation_ok"] = (
                verify_token_integrity(attestation, self.roots, now) is None
            )
        self._audit(profile_id, AuditOperation.STATUS, AuditOutcome.allowed(), digest)
        return status

    # -- admin surface ------------------------------------------------------------

    def admin_provision(self, request: ProvisionRequest) -> dict:
        if self.allocator is None:
            raise VaultError("gateway has no identifier allocator configured")
        policy = request.initial_policy or self.default_policy
        if policy is None:
            raise InvalidPolicy("no initial policy supplied and no default configured")
        imsi, iccid = self.allocator.allocate()
        profile_id = "esim-" + uuid.uuid4().hex[:12]
        ki = secrets.token_bytes(16)
        if self.operator_op is not None:
            km = MilenageKeyMaterial(k=ki, opc=derive_opc(ki, self.operator_op))
        else:
            km = MilenageKeyMaterial(k=ki, opc=secrets.token_bytes(16))
        binding = BindingMetadata(
            agent_public_key=request.agent_public_key,
            expected_measurements=request.expected_measurements,
            enterprise_namespace=request.enterprise_namespace,
            container_fingerprint=request.manifest_digest,
        )
        digest = request_digest(
            "provision",
            profile_id,
            {
                "agent_public_key": request.agent_public_key,
                "namespace": request.enterprise_namespace.encode("utf-8"),
                "measurements": b"".join(sorted(request.expected_measurements)),
                "manifest": request.manifest_digest or b"",
            },
        )
        with self._lock_for(profile_id):
            try:
                profile = new_profile(profile_id, imsi, iccid, km, binding, policy.policy_id)
                self.vault.install_profile(profile)
                self.netcore.register_subscriber(imsi, km)
                self.policies.set(profile_id, policy)
                self.vault.set_profile_state(profile_id, ProfileState.ACTIVE)
            except StorageFailure:
                raise
            except AgentEsimError as err:
                self._audit(
                    profile_id, AuditOperation.PROVISION,
                    AuditOutcome.error(type(err).__name__), digest,
                )
                raise
            self._audit(
                profile_id, AuditOperation.PROVISION, AuditOutcome.allowed(), digest
            )
        return {
            "profile_id": profile_id,
            "imsi": imsi,
            "iccid": iccid,
            "public_signing_key": profile.public_signing_key().hex(),
        }

    def revoke_profile(self, profile_id: str, reason: str) -> ProfileState:
        """Immediate revocation; returns the previous state. Idempotent."""
        digest = request_digest(
            "revoke", profile_id, {"reason": reason.encode("utf-8")}
        )
        with self._lock_for(profile_id):
            try:
                previous = self.vault.set_profile_state(profile_id, ProfileState.REVOKED)
            except StorageFailure:
                raise
            except AgentEsimError as err:
                self._audit(
                    profile_id, AuditOperation.STATE_CHANGE,
                    AuditOutcome.error(type(err).__name__), digest,
                )
                raise
            self._audit(
                profile_id, AuditOperation.STATE_CHANGE,
                AuditOutcome.allowed(f"Revoked: {reason}"), digest,
            )
            return previous

    def lifecycle(self, profile_id: str, action: str, *, reason: str = "") -> dict:
        if action not in _LIFECYCLE_TARGETS:
            raise MalformedRequest(f"unknown lifecycle action: {action}")
        if action == "revoke":
            previous = self.revoke_profile(profile_id, reason or "operator request")
            return {"previous_state": previous.value, "state": ProfileState.REVOKED.value}
        target = _LIFECYCLE_TARGETS[action]
        digest = request_digest(
            "lifecycle", profile_id, {"action": action.encode("ascii")}
        )
        with self._lock_for(profile_id):
            try:
                previous = self.vault.set_profile_state(profile_id, target)
            except StorageFailure:
                raise
            except AgentEsimError as err:
                self._audit(
                    profile_id, AuditOperation.STATE_CHANGE,
                    AuditOutcome.error(type(err).__name__), digest,
                )
                raise
            self._audit(
                profile_id, AuditOperation.STATE_CHANGE,
                AuditOutcome.allowed(f"{previous.value} -> {target.value}"), digest,
            )
            return {"previous_state": previous.value, "state": target.value}

    def update_policy(self, profile_id: str, new_policy: DelegationPolicy) -> str | None:
        """Atomically swap the profile's policy; returns the previous policy_id."""
        digest = request_digest(
            "policy", profile_id, {"policy_id": new_policy.policy_id.encode("utf-8")}
        )
        with self._lock_for(profile_id):
            try:
                self.vault.get_state(profile_id)  # profile must exist
                previous = self.policies.set(profile_id, new_policy)
            except StorageFailure:
                raise
            except AgentEsimError as err:
                self._audit(
                    profile_id, AuditOperation.POLICY_UPDATE,
                    AuditOutcome.error(type(err).__name__), digest,
                )
                raise
            self._audit(
                profile_id, AuditOperation.POLICY_UPDATE,
                AuditOutcome.allowed(f"{previous or '-'} -> {new_policy.policy_id}"),
                digest,
            )
            return previous

    def verify_audit(self) -> ChainStatus:
        return self.audit.verify()
