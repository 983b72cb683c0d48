import random

import pytest

from talekit.auth import DEFAULT_SCOPES, AuthManager, LocalIdentityProvider, TOKEN_TTL
from talekit.errors import (
    BadCredentials,
    InvalidToken,
    ScopeEscalation,
    UnknownIssuer,
    UnknownToken,
)
from talekit.storage import JournalStore


@pytest.fixture
def auth(clock):
    mgr = AuthManager(clock=clock)
    mgr.register_issuer(LocalIdentityProvider("local", secret="ok"))
    mgr.register_issuer(
        LocalIdentityProvider("campus", per_subject={"alice": "pw-a", "bob": "pw-b"})
    )
    mgr.register_issuer(LocalIdentityProvider("orcid", secret="orc"))
    return mgr


class TestAuthenticate:
    def test_default_scopes(self, auth):
        token = auth.authenticate("local", "alice", "ok")
        assert token.scopes == DEFAULT_SCOPES
        assert len(bytes.fromhex(token.value)) == 32

    def test_bad_proof(self, auth):
        with pytest.raises(BadCredentials):
            auth.authenticate("local", "alice", "wrong")

    def test_unknown_issuer(self, auth):
        with pytest.raises(UnknownIssuer):
            auth.authenticate("x", "alice", "ok")

    def test_expiry_one_hour(self, auth, clock):
        token = auth.authenticate("local", "alice", "ok")
        assert token.expiry == clock() + TOKEN_TTL

    def test_requested_scope_subset(self, auth):
        token = auth.authenticate("local", "alice", "ok", scopes={"data:read"})
        assert token.scopes == frozenset({"data:read"})


class TestLinking:
    def test_link_two(self, auth):
        members = auth.link_identities(
            ("campus", "alice", "pw-a"), ("orcid", "alice", "orc")
        )
        assert len(members) == 2

    def test_transitive_union(self, auth):
        auth.link_identities(("campus", "alice", "pw-a"), ("orcid", "alice", "orc"))
        members = auth.link_identities(("orcid", "alice", "orc"), ("local", "ali", "ok"))
        assert len(members) == 3

    def test_bad_proof_leaves_sets_unchanged(self, auth):
        t = auth.authenticate("campus", "alice", "pw-a")
        before = auth.identity_set(t.identity)
        with pytest.raises(BadCredentials):
            auth.link_identities(("campus", "alice", "nope"), ("orcid", "alice", "orc"))
        assert auth.identity_set(t.identity) == before

    def test_equivalence_relation(self, auth):
        # reflexive / symmetric / transitive over three identities
        auth.link_identities(("campus", "alice", "pw-a"), ("orcid", "alice", "orc"))
        auth.link_identities(("campus", "bob", "pw-b"), ("orcid", "alice", "orc"))
        ta = auth.authenticate("campus", "alice", "pw-a")
        tb = auth.authenticate("campus", "bob", "pw-b")
        assert auth.identity_set(ta.identity) == auth.identity_set(tb.identity)


class TestAuthorize:
    def test_linked_identity_grants_owner_access(self, auth):
        orcid_token = auth.authenticate("orcid", "alice", "orc")
        auth.set_owner("resource-1", orcid_token.identity)
        auth.link_identities(("campus", "alice", "pw-a"), ("orcid", "alice", "orc"))
        campus_token = auth.authenticate("campus", "alice", "pw-a")
        assert auth.authorize(campus_token.value, "resource-1", "data:write").allowed

    def test_expired(self, auth, clock):
        token = auth.authenticate("local", "alice", "ok")
        clock.advance(TOKEN_TTL + 1)
        decision = auth.authorize(token.value, None, "data:read")
        assert not decision.allowed and decision.reason == "Expired"

    def test_missing_scope_for_annotate(self, auth):
        token = auth.authenticate("local", "alice", "ok", scopes={"data:read"})
        decision = auth.authorize(token.value, None, "annotate")
        assert not decision.allowed and decision.reason == "InsufficientScope"

    def test_unowned_resource_scope_only(self, auth):
        token = auth.authenticate("local", "alice", "ok")
        assert auth.authorize(token.value, "anything", "data:read").allowed

    def test_non_owner_denied(self, auth):
        owner = auth.authenticate("local", "alice", "ok")
        auth.set_owner("res", owner.identity)
        other = auth.authenticate("local", "mallory", "ok")
        decision = auth.authorize(other.value, "res", "data:write")
        assert not decision.allowed and decision.reason == "NotPermitted"

    def test_public_flag_allows_read_only(self, auth):
        owner = auth.authenticate("local", "alice", "ok")
        auth.set_owner("res", owner.identity, public=True)
        other = auth.authenticate("local", "bob", "ok")
        assert auth.authorize(other.value, "res", "data:read").allowed
        assert not auth.authorize(other.value, "res", "data:write").allowed

    def test_unknown_token(self, auth):
        decision = auth.authorize("bogus", None, "data:read")
        assert not decision.allowed and decision.reason == "UnknownToken"


class TestDelegation:
    def test_narrowing(self, auth):
        parent = auth.authenticate("local", "alice", "ok", scopes={"data:read", "data:write"})
        child = auth.delegate(parent.value, "svc", {"data:read"})
        assert child.scopes == frozenset({"data:read"})
        assert child.parent == parent.value
        assert child.audience == "svc"
        assert child.expiry <= parent.expiry

    def test_escalation(self, auth):
        parent = auth.authenticate("local", "alice", "ok", scopes={"data:read"})
        with pytest.raises(ScopeEscalation):
            auth.delegate(parent.value, "svc", {"data:read", "data:write"})

    def test_delegate_from_revoked(self, auth):
        parent = auth.authenticate("local", "alice", "ok")
        auth.revoke(parent.value)
        with pytest.raises(InvalidToken):
            auth.delegate(parent.value, "svc", {"data:read"})


class TestRevocation:
    def test_revoke_parent_denies_child(self, auth):
        parent = auth.authenticate("local", "alice", "ok")
        child = auth.delegate(parent.value, "svc", {"data:read"})
        auth.revoke(parent.value)
        decision = auth.authorize(child.value, None, "data:read")
        assert not decision.allowed and decision.reason == "Revoked"

    def test_revoke_leaf_keeps_parent(self, auth):
        parent = auth.authenticate("local", "alice", "ok")
        child = auth.delegate(parent.value, "svc", {"data:read"})
        auth.revoke(child.value)
        assert auth.authorize(parent.value, None, "data:read").allowed

    def test_revoke_unknown(self, auth):
        with pytest.raises(UnknownToken):
            auth.revoke("nope")


def test_chain_monotonicity_randomized(auth):
    rng = random.Random(99)
    for _ in range(200):
        token = auth.authenticate("local", "user", "ok")
        chain = [token]
        for depth in range(rng.randint(1, 5)):
            scopes = set(rng.sample(sorted(chain[-1].scopes), rng.randint(1, len(chain[-1].scopes))))
            chain.append(auth.delegate(chain[-1].value, f"svc{depth}", scopes))
        for parent, child in zip(chain, chain[1:]):
            assert child.scopes <= parent.scopes
        cut = rng.randrange(len(chain))
        auth.revoke(chain[cut].value)
        for t in chain[cut:]:
            assert not auth.authorize(t.value, None, "data:read").allowed


def test_auth_state_persists(tmp_path, clock):
    path = str(tmp_path / "auth.wt")
    store = JournalStore(path)
    mgr = AuthManager(store, clock=clock)
    mgr.register_issuer(LocalIdentityProvider("local", secret="ok"))
    token = mgr.authenticate("local", "alice", "ok")
    child = mgr.delegate(token.value, "svc", {"data:read"})
    mgr.link_identities(("local", "alice", "ok"), ("local", "alias", "ok"))
    store.close()

    reopened = AuthManager(JournalStore(path), clock=clock)
    assert reopened.authorize(token.value, None, "data:read").allowed
    assert reopened.authorize(child.value, None, "data:read").allowed
    assert len(reopened.identity_set(token.identity)) == 2
    reopened.revoke(token.value)
    assert not reopened.authorize(child.value, None, "data:read").allowed
