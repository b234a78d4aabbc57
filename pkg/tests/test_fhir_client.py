from __future__ import annotations

import json

import pytest

from planaudit.fhir_client import FhirClient, HttpError, NotFound
from planaudit.planner import (
    AuthError,
    BackendError,
    HttpBackend,
    PromptContext,
)

from .stubserver import StubServer, completion, searchset


@pytest.fixture()
def stub():
    with StubServer() as server:
        yield server


def patient(pid: str) -> dict:
    return {"resourceType": "Patient", "id": pid}


def observation(pid: str, oid: str) -> dict:
    return {
        "resourceType": "Observation",
        "id": oid,
        "subject": {"reference": f"Patient/{pid}"},
        "status": "final",
        "code": {"text": f"Obs {oid}"},
        "effectiveDateTime": "2023-05-01T00:00:00Z",
    }


def wire_empty_searches(stub: StubServer, pid: str, except_kinds: set[str] = frozenset()):
    for kind in ("Encounter", "Condition", "MedicationRequest", "Observation", "Procedure"):
        if kind in except_kinds:
            continue
        stub.routes[f"/{kind}?patient={pid}&_count=50"] = (200, searchset([]))


# ---------------------------------------------------------------------------
# FhirClient


def test_fetch_bundle_with_empty_lists(stub):
    stub.routes["/Patient/p1"] = (200, patient("p1"))
    wire_empty_searches(stub, "p1")
    with FhirClient(stub.base_url) as client:
        bundle = client.fetch_patient_bundle("p1")
    assert bundle.patient_id == "p1"
    assert bundle.source == "rest_server"
    assert bundle.all_resources() == []


def test_fetch_follows_pagination(stub):
    stub.routes["/Patient/p1"] = (200, patient("p1"))
    wire_empty_searches(stub, "p1", except_kinds={"Observation"})
    page_2_url = f"{stub.base_url}/Observation?patient=p1&page=2"
    stub.routes["/Observation?patient=p1&_count=50"] = (
        200,
        searchset(
            [observation("p1", f"o{i}") for i in range(3)], next_url=page_2_url
        ),
    )
    stub.routes["/Observation?patient=p1&page=2"] = (
        200,
        searchset([observation("p1", f"o{i}") for i in range(3, 5)]),
    )
    with FhirClient(stub.base_url) as client:
        bundle = client.fetch_patient_bundle("p1")
    assert len(bundle.observations) == 5


def test_server_error_maps_to_http_error(stub):
    stub.routes["/Patient/p1"] = (500, {"error": "boom"})
    with FhirClient(stub.base_url) as client:
        with pytest.raises(HttpError) as excinfo:
            client.fetch_patient_bundle("p1")
    assert excinfo.value.status_code == 500


def test_missing_patient_maps_to_not_found(stub):
    with FhirClient(stub.base_url) as client:
        with pytest.raises(NotFound):
            client.fetch_patient_bundle("ghost")


def test_page_cap_bounds_misbehaving_server(stub):
    stub.routes["/Patient/p1"] = (200, patient("p1"))
    wire_empty_searches(stub, "p1", except_kinds={"Observation"})
    # Self-linking page: always advertises itself as next.
    loop_url = f"{stub.base_url}/Observation?patient=p1&_count=50"
    stub.routes["/Observation?patient=p1&_count=50"] = (
        200,
        searchset([observation("p1", "o-loop")], next_url=loop_url),
    )
    with FhirClient(stub.base_url, page_cap=5) as client:
        bundle = client.fetch_patient_bundle("p1")
    # One parsed observation (duplicates dropped), bounded request count.
    observation_requests = [
        r for r in stub.requests if r[1].startswith("/Observation")
    ]
    assert len(observation_requests) == 5
    assert len(bundle.observations) == 1


def test_list_patient_ids_sorted(stub):
    stub.routes["/Patient?_count=50"] = (
        200,
        searchset([patient("p2"), patient("p1"), patient("p3")]),
    )
    with FhirClient(stub.base_url) as client:
        assert client.list_patient_ids() == ["p1", "p2", "p3"]
        assert client.list_patient_ids(limit=2) == ["p1", "p2"]


def test_bearer_token_header_sent(stub):
    stub.routes["/Patient/p1"] = (200, patient("p1"))
    wire_empty_searches(stub, "p1")
    with FhirClient(stub.base_url, bearer_token="sekret") as client:
        client.fetch_patient_bundle("p1")
    # The stub records no headers; assert via httpx client config instead.
    assert client._client.headers["Authorization"] == "Bearer sekret"


# ---------------------------------------------------------------------------
# HttpBackend


CANNED_PLAN = json.dumps(
    {
        "actions": [
            {"type": "Follow-up Appointment", "details": "PCP", "deadline_hours": 168}
        ],
        "confidence": 0.9,
    }
)

CTX = PromptContext(snapshot_text="Patient summary (snapshot-v1)\n")


def test_backend_echoes_canned_plan(stub):
    stub.post_responses = [(200, completion(CANNED_PLAN))]
    backend = HttpBackend(f"{stub.base_url}/v1/chat", api_key="k", model="m")
    assert backend.generate(CTX) == CANNED_PLAN
    method, path, body = stub.requests[0]
    payload = json.loads(body)
    assert payload["model"] == "m"
    assert payload["messages"][0]["role"] == "system"
    assert "Patient summary" in payload["messages"][1]["content"]


def test_backend_retries_on_429_then_succeeds(stub):
    stub.post_responses = [
        (429, {"error": "rate limited"}),
        (429, {"error": "rate limited"}),
        (200, completion(CANNED_PLAN)),
    ]
    backend = HttpBackend(
        f"{stub.base_url}/v1/chat", max_retries=2, backoff_base_seconds=0.01
    )
    assert backend.generate(CTX) == CANNED_PLAN
    assert len(stub.requests) == 3


def test_backend_gives_up_after_retry_budget(stub):
    stub.post_responses = [(503, {"error": "down"})]
    backend = HttpBackend(
        f"{stub.base_url}/v1/chat", max_retries=2, backoff_base_seconds=0.01
    )
    with pytest.raises(BackendError):
        backend.generate(CTX)
    assert len(stub.requests) == 3  # initial + 2 retries


def test_backend_auth_error_no_retry(stub):
    stub.post_responses = [(401, {"error": "bad key"})]
    backend = HttpBackend(f"{stub.base_url}/v1/chat", backoff_base_seconds=0.01)
    with pytest.raises(AuthError):
        backend.generate(CTX)
    assert len(stub.requests) == 1


def test_backend_malformed_payload(stub):
    stub.post_responses = [(200, {"unexpected": "shape"})]
    backend = HttpBackend(f"{stub.base_url}/v1/chat")
    with pytest.raises(BackendError):
        backend.generate(CTX)


def test_backend_prior_draft_in_prompt(stub):
    stub.post_responses = [(200, completion(CANNED_PLAN))]
    backend = HttpBackend(f"{stub.base_url}/v1/chat")
    from planaudit.actions import ActionType

    ctx = PromptContext(
        snapshot_text="summary",
        prior_draft='{"actions": []}',
        missing_categories=[ActionType.PATIENT_EDUCATION],
    )
    backend.generate(ctx)
    body = json.loads(stub.requests[0][2])
    user_prompt = body["messages"][1]["content"]
    assert "previous draft" in user_prompt
    assert "Patient Education" in user_prompt
