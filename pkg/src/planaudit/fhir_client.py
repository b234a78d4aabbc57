"""FHIR R4 REST client: per-kind searches with paging, assembled into bundles."""

from __future__ import annotations

import json
import logging
from typing import Any

import httpx

from .fhir import (
    FhirResource,
    MalformedResource,
    PatientBundle,
    UnsupportedResourceType,
    assemble_bundles,
    parse_resource,
)

logger = logging.getLogger(__name__)

# Bounded work on misbehaving servers.
DEFAULT_PAGE_CAP = 100
SEARCH_KINDS = ("Encounter", "Condition", "MedicationRequest", "Observation", "Procedure")


class HttpError(RuntimeError):
    def __init__(self, status_code: int, body_excerpt: str):
        super().__init__(f"HTTP {status_code}: {body_excerpt}")
        self.status_code = status_code
        self.body_excerpt = body_excerpt


class NotFound(RuntimeError):
    """Patient absent on the server."""


class Timeout(RuntimeError):
    """Configured request deadline exceeded."""


def _excerpt(text: str, limit: int = 200) -> str:
    return text[:limit]


class FhirClient:
    """Minimal read-only client for a FHIR R4 server (e.g. HAPI)."""

    def __init__(
        self,
        base_url: str,
        *,
        timeout_seconds: float = 30.0,
        page_cap: int = DEFAULT_PAGE_CAP,
        bearer_token: str | None = None,
        page_size: int = 50,
    ):
        self.base_url = base_url.rstrip("/")
        self.page_cap = page_cap
        self.page_size = page_size
        headers = {"Accept": "application/fhir+json, application/json"}
        if bearer_token:
            headers["Authorization"] = f"Bearer {bearer_token}"
        self._client = httpx.Client(timeout=timeout_seconds, headers=headers)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "FhirClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _get(self, url: str) -> httpx.Response:
        try:
            response = self._client.get(url)
        except httpx.TimeoutException as exc:
            raise Timeout(f"request to {url} timed out") from exc
        except httpx.HTTPError as exc:
            raise HttpError(0, str(exc)) from exc
        if response.status_code == 404:
            raise NotFound(url)
        if not 200 <= response.status_code < 300:
            raise HttpError(response.status_code, _excerpt(response.text))
        return response

    def _search_pages(self, first_url: str) -> list[dict[str, Any]]:
        """Follow searchset "next" links, returning all entry resources."""
        entries: list[dict[str, Any]] = []
        url: str | None = first_url
        pages = 0
        while url and pages < self.page_cap:
            payload = self._get(url).json()
            for entry in payload.get("entry") or []:
                resource = entry.get("resource")
                if isinstance(resource, dict):
                    entries.append(resource)
            url = None
            for link in payload.get("link") or []:
                if isinstance(link, dict) and link.get("relation") == "next":
                    url = link.get("url")
                    break
            pages += 1
        return entries

    def _parse_entries(self, entries: list[dict[str, Any]]) -> list[FhirResource]:
        parsed: list[FhirResource] = []
        for entry in entries:
            try:
                parsed.append(parse_resource(json.dumps(entry)))
            except (UnsupportedResourceType, MalformedResource) as exc:
                logger.warning("skipping server resource: %s", exc)
        return parsed

    def fetch_patient_bundle(self, patient_id: str) -> PatientBundle:
        """Fetch one patient's resources across all supported kinds."""
        if not patient_id:
            raise ValueError("patient_id must be non-empty")
        patient_json = self._get(f"{self.base_url}/Patient/{patient_id}").json()
        resources = [parse_resource(json.dumps(patient_json))]
        for kind in SEARCH_KINDS:
            url = f"{self.base_url}/{kind}?patient={patient_id}&_count={self.page_size}"
            resources.extend(self._parse_entries(self._search_pages(url)))
        bundles, _ = assemble_bundles(resources)
        for bundle in bundles:
            if bundle.patient_id == patient_id:
                bundle.source = "rest_server"
                return bundle
        raise NotFound(f"Patient/{patient_id}")

    def list_patient_ids(self, limit: int | None = None) -> list[str]:
        """Enumerate patient ids via a paged Patient search, sorted."""
        url = f"{self.base_url}/Patient?_count={self.page_size}"
        ids = sorted(
            {
                str(entry["id"])
                for entry in self._search_pages(url)
                if entry.get("resourceType") == "Patient" and entry.get("id")
            }
        )
        return ids[:limit] if limit is not None else ids
