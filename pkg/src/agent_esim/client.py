"""HTTP clients for the gateway wire protocol.

GatewayClient is the agent-facing surface (sign / authenticate / status);
AdminClient adds the operator endpoints behind the shared admin secret.
Every call records the raw response in the client transcript so harnesses
can audit and byte-scan exactly what crossed the wire.
"""

from __future__ import annotations

import http.client
import json
import urllib.parse
from typing import Any

from .attestation import AttestationToken
from .errors import (
    AdminAuthFailure,
    DeniedByGateway,
    InvalidPolicy,
    MalformedRequest,
    ServiceUnreachable,
    UnknownProfile,
    VaultError,
)
from .httpapi import ADMIN_SECRET_HEADER, ATTESTATION_HEADER


class GatewayClient:
    def __init__(self, base_url: str, *, timeout: float = 10.0):
        parsed = urllib.parse.urlparse(base_url)
        if parsed.scheme != "http" or not parsed.hostname:
            raise ServiceUnreachable(f"unsupported endpoint url: {base_url}")
        self.host = parsed.hostname
        self.port = parsed.port or 80
        self.timeout = timeout
        self.transcript: list[dict[str, Any]] = []

    # -- low level ---------------------------------------------------------------

    def request(
        self,
        method: str,
        path: str,
        body: dict | None = None,
        headers: dict | None = None,
    ) -> tuple[int, dict, str]:
        payload = json.dumps(body).encode("utf-8") if body is not None else None
        send_headers = {"Content-Type": "application/json"}
        send_headers.update(headers or {})
        try:
            conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            conn.request(method, path, body=payload, headers=send_headers)
            response = conn.getresponse()
            raw = response.read().decode("utf-8", "replace")
            status = response.status
            conn.close()
        except (OSError, http.client.HTTPException) as err:
            raise ServiceUnreachable(
                f"{method} {path} against {self.host}:{self.port} failed: {err}"
            ) from err
        try:
            parsed = json.loads(raw) if raw else {}
        except ValueError:
            parsed = {"error": "NonJsonResponse", "raw": raw}
        self.transcript.append(
            {
                "method": method,
                "path": path,
                "request_body": payload.decode("utf-8") if payload else None,
                "status": status,
                "response": raw,
            }
        )
        return status, parsed, raw

    @staticmethod
    def _raise_for(status: int, body: dict) -> None:
        if status == 403:
            raise DeniedByGateway(
                body.get("reason", "unknown"), retry_after=body.get("retry_after")
            )
        if status == 404:
            raise UnknownProfile(body.get("message", "not found"))
        if status == 401:
            raise AdminAuthFailure(body.get("message", "admin auth failed"))
        if status == 400:
            error = body.get("error", "MalformedRequest")
            if error == "InvalidPolicy":
                raise InvalidPolicy(body.get("message", "invalid policy"))
            raise MalformedRequest(body.get("message", "bad request"))
        if status >= 500 or status == 503:
            raise VaultError(body.get("message", f"service error {status}"))
        if status != 200:
            raise VaultError(f"unexpected status {status}: {body}")

    def _call(self, method: str, path: str, body=None, headers=None) -> dict:
        status, parsed, _ = self.request(method, path, body, headers)
        self._raise_for(status, parsed)
        return parsed

    # -- identity endpoints ---------------------------------------------------------

    @staticmethod
    def _token_header(token: AttestationToken | None) -> dict:
        return {ATTESTATION_HEADER: token.to_header()} if token is not None else {}

    def sign(
        self, profile_id: str, payload_digest: bytes, token: AttestationToken | None
    ) -> dict:
        return self._call(
            "POST",
            "/identity/sign",
            {"profile_id": profile_id, "payload_digest": payload_digest.hex()},
            self._token_header(token),
        )

    def authenticate(
        self,
        profile_id: str,
        rand: bytes,
        autn: bytes,
        token: AttestationToken | None,
    ) -> dict:
        return self._call(
            "POST",
            "/identity/authenticate",
            {"profile_id": profile_id, "rand": rand.hex(), "autn": autn.hex()},
            self._token_header(token),
        )

    def status(self, profile_id: str, token: AttestationToken | None = None) -> dict:
        return self._call(
            "GET", f"/identity/status/{profile_id}", None, self._token_header(token)
        )


class AdminClient(GatewayClient):
    def __init__(self, base_url: str, admin_secret: str, *, timeout: float = 10.0):
        super().__init__(base_url, timeout=timeout)
        self.admin_secret = admin_secret

    def _admin_call(self, method: str, path: str, body=None) -> dict:
        return self._call(method, path, body, {ADMIN_SECRET_HEADER: self.admin_secret})

    def provision(self, request_document: dict) -> dict:
        return self._admin_call("POST", "/admin/provision", request_document)

    def revoke(self, profile_id: str, reason: str) -> dict:
        return self._admin_call(
            "POST", "/admin/revoke", {"profile_id": profile_id, "reason": reason}
        )

    def lifecycle(self, profile_id: str, action: str, reason: str = "") -> dict:
        return self._admin_call(
            "POST",
            "/admin/lifecycle",
            {"profile_id": profile_id, "action": action, "reason": reason},
        )

    def update_policy(self, profile_id: str, policy_document: dict) -> dict:
        return self._admin_call(
            "POST", "/admin/policy", {"profile_id": profile_id, "policy": policy_document}
        )

    def audit_verify(self) -> dict:
        return self._admin_call("GET", "/admin/audit/verify")
