"""Token-based identity and access management.

Users authenticate against pluggable identity providers (a shared-secret
local provider ships for development use), may link several identities into one
equivalence set so any of them carries the permissions of all, and receive
opaque bearer tokens carrying scopes. Tokens can be delegated to services
with narrowed scopes and revoked transitively. Validation is entirely
server-side: a token is a 32-byte random value, never self-describing.
"""

from __future__ import annotations

import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional, Set

from .errors import (
    BadCredentials,
    InvalidToken,
    ScopeEscalation,
    UnknownIssuer,
    UnknownToken,
)
from .storage import JournalStore, Table

SCOPES = frozenset({"data:read", "data:write", "tale:write", "instance:launch", "publish"})
DEFAULT_SCOPES = SCOPES
TOKEN_TTL = 3600.0  # seconds

# actions named by callers -> scope they require; scope names pass through
ACTION_SCOPES = {
    "read": "data:read",
    "list": "data:read",
    "annotate": "data:write",
    "move": "data:write",
    "rename": "data:write",
    "register": "data:write",
    "launch": "instance:launch",
    "publish": "publish",
}


@dataclass(frozen=True)
class Identity:
    id: str
    issuer: str
    subject: str
    display_name: str


@dataclass
class Token:
    value: str
    identity: str
    scopes: FrozenSet[str]
    expiry: float
    parent: Optional[str] = None
    audience: Optional[str] = None
    revoked: bool = False


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str

    def __bool__(self) -> bool:
        return self.allowed


class LocalIdentityProvider:
    """Shared-secret test provider; mirrors authorization-code semantics
    closely enough that a real OAuth adapter can replace it."""

    def __init__(self, issuer: str, secret: str = "", per_subject: Optional[Dict[str, str]] = None):
        self.issuer = issuer
        self._secret = secret
        self._per_subject = per_subject or {}

    def verify(self, subject: str, proof: str) -> bool:
        if subject in self._per_subject:
            return secrets.compare_digest(proof, self._per_subject[subject])
        return bool(self._secret) and secrets.compare_digest(proof, self._secret)


class AuthManager:
    """Identities, identity sets, tokens, and per-resource ACLs."""

    def __init__(self, store: Optional[JournalStore] = None, clock: Callable[[], float] = time.time):
        self.clock = clock
        self._lock = threading.RLock()
        self._issuers: Dict[str, LocalIdentityProvider] = {}
        self._ids_tbl = Table(store, "auth.identities")
        self._tok_tbl = Table(store, "auth.tokens")
        self._acl_tbl = Table(store, "auth.acls")
        self._identities: Dict[str, Identity] = {}
        self._by_subject: Dict[tuple, str] = {}
        self._set_of: Dict[str, str] = {}  # identity id -> set id
        for iid, rec in self._ids_tbl.items():
            ident = Identity(
                id=iid,
                issuer=rec["issuer"],
                subject=rec["subject"],
                display_name=rec.get("display_name", rec["subject"]),
            )
            self._identities[iid] = ident
            self._by_subject[(ident.issuer, ident.subject)] = iid
            self._set_of[iid] = rec.get("set", iid)
        self._tokens: Dict[str, Token] = {}
        self._children: Dict[str, List[str]] = {}
        for value, rec in self._tok_tbl.items():
            tok = Token(
                value=value,
                identity=rec["identity"],
                scopes=frozenset(rec["scopes"]),
                expiry=rec["expiry"],
                parent=rec.get("parent"),
                audience=rec.get("audience"),
                revoked=rec.get("revoked", False),
            )
            self._tokens[value] = tok
            if tok.parent:
                self._children.setdefault(tok.parent, []).append(value)

    # -- issuers & identities ------------------------------------------------

    def register_issuer(self, provider: LocalIdentityProvider) -> None:
        with self._lock:
            self._issuers[provider.issuer] = provider

    def _verify(self, issuer: str, subject: str, proof: str) -> None:
        provider = self._issuers.get(issuer)
        if provider is None:
            raise UnknownIssuer(f"issuer {issuer!r} is not registered")
        if not provider.verify(subject, proof):
            raise BadCredentials(f"proof rejected for {subject}@{issuer}")

    def _get_or_create_identity(self, issuer: str, subject: str, display_name: str = "") -> Identity:
        key = (issuer, subject)
        iid = self._by_subject.get(key)
        if iid is not None:
            return self._identities[iid]
        ident = Identity(
            id=uuid.uuid4().hex,
            issuer=issuer,
            subject=subject,
            display_name=display_name or subject,
        )
        self._identities[ident.id] = ident
        self._by_subject[key] = ident.id
        self._set_of[ident.id] = ident.id  # singleton equivalence class
        self._save_identity(ident)
        return ident

    def _save_identity(self, ident: Identity) -> None:
        self._ids_tbl.put(
            ident.id,
            {
                "issuer": ident.issuer,
                "subject": ident.subject,
                "display_name": ident.display_name,
                "set": self._set_of[ident.id],
            },
        )

    def identity(self, identity_id: str) -> Optional[Identity]:
        return self._identities.get(identity_id)

    def identity_set(self, identity_id: str) -> Set[str]:
        """All identities linked with the given one (including itself)."""
        with self._lock:
            set_id = self._set_of.get(identity_id)
            if set_id is None:
                return set()
            return {iid for iid, sid in self._set_of.items() if sid == set_id}

    # -- operations ------------------------------------------------------------

    def authenticate(
        self,
        issuer: str,
        subject: str,
        proof: str,
        scopes: Optional[Set[str]] = None,
        display_name: str = "",
    ) -> Token:
        with self._lock:
            self._verify(issuer, subject, proof)
            ident = self._get_or_create_identity(issuer, subject, display_name)
            granted = DEFAULT_SCOPES if scopes is None else frozenset(scopes)
            unknown = granted - SCOPES
            if unknown:
                raise ScopeEscalation(f"unknown scopes requested: {sorted(unknown)}")
            token = Token(
                value=secrets.token_hex(32),
                identity=ident.id,
                scopes=frozenset(granted),
                expiry=self.clock() + TOKEN_TTL,
            )
            self._store_token(token)
            return token

    def link_identities(
        self,
        a: tuple[str, str, str],
        b: tuple[str, str, str],
    ) -> Set[str]:
        """Merge the identity sets of two (issuer, subject, proof) triples."""
        with self._lock:
            self._verify(*a)
            self._verify(*b)
            ia = self._get_or_create_identity(a[0], a[1])
            ib = self._get_or_create_identity(b[0], b[1])
            target = self._set_of[ia.id]
            source = self._set_of[ib.id]
            if source != target:
                for iid, sid in list(self._set_of.items()):
                    if sid == source:
                        self._set_of[iid] = target
                        self._save_identity(self._identities[iid])
            return self.identity_set(ia.id)

    def authorize(self, token_value: Optional[str], resource: Optional[str], action: str) -> Decision:
        """Scope plus ACL check; denies carry a reason code, never raise."""
        with self._lock:
            token = self._tokens.get(token_value or "")
            if token is None:
                return Decision(False, "UnknownToken")
            if token.revoked:
                return Decision(False, "Revoked")
            if self.clock() > token.expiry:
                return Decision(False, "Expired")
            required = action if action in SCOPES else ACTION_SCOPES.get(action)
            if required is None:
                return Decision(False, "InsufficientScope")
            if required not in token.scopes:
                return Decision(False, "InsufficientScope")
            if resource is None:
                return Decision(True, "ok")
            acl = self._acl_tbl.get(resource)
            if acl is None:
                return Decision(True, "ok")  # unowned resources gated by scope only
            linked = self.identity_set(token.identity)
            if acl.get("owner") in linked:
                return Decision(True, "ok")
            if acl.get("public") and required == "data:read":
                return Decision(True, "ok")
            return Decision(False, "NotPermitted")

    def delegate(self, token_value: str, audience: str, scopes: Set[str]) -> Token:
        with self._lock:
            parent = self._tokens.get(token_value)
            if parent is None or parent.revoked or self.clock() > parent.expiry:
                raise InvalidToken("parent token is unknown, revoked, or expired")
            requested = frozenset(scopes)
            if not requested <= parent.scopes:
                raise ScopeEscalation(
                    f"requested {sorted(requested - parent.scopes)} beyond parent scopes"
                )
            child = Token(
                value=secrets.token_hex(32),
                identity=parent.identity,
                scopes=requested,
                expiry=parent.expiry,
                parent=parent.value,
                audience=audience,
            )
            self._store_token(child)
            self._children.setdefault(parent.value, []).append(child.value)
            return child

    def revoke(self, token_value: str) -> None:
        """Revoke a token and, transitively, everything delegated from it."""
        with self._lock:
            if token_value not in self._tokens:
                raise UnknownToken("no such token")
            queue = [token_value]
            while queue:
                value = queue.pop()
                token = self._tokens[value]
                if not token.revoked:
                    token.revoked = True
                    self._store_token(token)
                queue.extend(self._children.get(value, []))

    # -- helpers ---------------------------------------------------------------

    def _store_token(self, token: Token) -> None:
        self._tokens[token.value] = token
        self._tok_tbl.put(
            token.value,
            {
                "identity": token.identity,
                "scopes": sorted(token.scopes),
                "expiry": token.expiry,
                "parent": token.parent,
                "audience": token.audience,
                "revoked": token.revoked,
            },
        )

    def token(self, value: str) -> Optional[Token]:
        with self._lock:
            return self._tokens.get(value)

    def token_identity(self, value: str) -> Optional[Identity]:
        tok = self.token(value)
        return self._identities.get(tok.identity) if tok else None

    def set_owner(self, resource: str, identity_id: str, public: bool = False) -> None:
        with self._lock:
            self._acl_tbl.put(resource, {"owner": identity_id, "public": public})

    def set_public(self, resource: str, public: bool) -> None:
        with self._lock:
            acl = self._acl_tbl.get(resource) or {}
            acl["public"] = public
            self._acl_tbl.put(resource, acl)
