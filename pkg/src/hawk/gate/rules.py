"""Privacy rules backing the release gate and the registry metrics:
offline IP geolocation with EU/non-EU classification, and purpose-limitation
checks against labeled endpoints.
"""
from __future__ import annotations

import csv
import ipaddress
import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional

from ..model import HawkError, Phase, Side, TrafficRecord


class MalformedAddress(HawkError):
    code = "MALFORMED_ADDRESS"


class GeoClass(str, Enum):
    EU = "eu"
    NON_EU = "non_eu"
    UNKNOWN = "unknown"


CidrTable = list[tuple[ipaddress.IPv4Network | ipaddress.IPv6Network, str]]


def _data_text(name: str) -> str:
    return resources.files("hawk.gate").joinpath("data", name).read_text()


def load_cidr_table(path: Optional[str] = None) -> CidrTable:
    """Load a cidr,countryCode table; defaults to the bundled desk-scale one."""
    text = open(path).read() if path else _data_text("cidr_table.csv")
    table: CidrTable = []
    for row in csv.reader(line for line in text.splitlines() if line and not line.startswith("#")):
        if len(row) != 2:
            raise HawkError(f"bad cidr table row: {row}", code="BAD_CIDR_TABLE")
        table.append((ipaddress.ip_network(row[0].strip()), row[1].strip().upper()))
    return table


def load_eu_set(path: Optional[str] = None, include_eea: Optional[bool] = None) -> frozenset[str]:
    """EU country-code set, optionally extended by the EEA per the data file."""
    text = open(path).read() if path else _data_text("eu_countries.json")
    data = json.loads(text)
    codes = set(data["eu"])
    use_eea = data.get("include_eea", True) if include_eea is None else include_eea
    if use_eea:
        codes.update(data.get("eea_extra", []))
    return frozenset(codes)


def classify_ip(ip: str, table: CidrTable, eu_set: frozenset[str]) -> GeoClass:
    """Longest-prefix-match classification of a textual IPv4/IPv6 address.

    An explicit table entry always wins (the bundled table deliberately
    maps documentation ranges that Python's ipaddress flags as private).
    Unmatched addresses — which covers loopback, RFC 1918, and link-local
    space — are UNKNOWN; syntactically invalid input raises
    MalformedAddress.
    """
    try:
        address = ipaddress.ip_address(ip.strip())
    except ValueError as exc:
        raise MalformedAddress(str(exc)) from exc
    best: Optional[tuple[int, str]] = None
    for network, country in table:
        if address.version == network.version and address in network:
            if best is None or network.prefixlen > best[0]:
                best = (network.prefixlen, country)
    if best is None:
        return GeoClass.UNKNOWN
    return GeoClass.EU if best[1] in eu_set else GeoClass.NON_EU


def classify_host(host: str, table: CidrTable, eu_set: frozenset[str]) -> GeoClass:
    """Classify an authority string; non-IP-literal hosts are UNKNOWN."""
    bare = host.strip()
    if bare.startswith("["):  # bracketed IPv6 authority
        bare = bare[1:].split("]", 1)[0]
    elif bare.count(":") == 1:
        bare = bare.split(":", 1)[0]
    try:
        return classify_ip(bare, table, eu_set)
    except MalformedAddress:
        return GeoClass.UNKNOWN


@dataclass(frozen=True)
class PurposeRule:
    """Traffic toward (targetService, method) must be covered by a purpose label."""

    name: str
    target_service: str
    method: str
    required_purpose: str


@dataclass(frozen=True)
class PurposeViolation:
    rule: str
    client_service: Optional[str]
    service: str


def evaluate_purpose_rule(
    record: TrafficRecord,
    rule: PurposeRule,
    labeled_purposes: frozenset[str],
    client_service: Optional[str] = None,
) -> Optional[PurposeViolation]:
    """Check one server-side request record against a purpose rule.

    A violation arises when the record matches the rule's target service
    and method but no field definition on that endpoint carries the
    required purpose. ``labeled_purposes`` is the union of purposes over
    the endpoint's definitions.
    """
    if record.side is not Side.SERVER or record.phase is not Phase.REQUEST:
        return None
    if record.endpoint.service != rule.target_service:
        return None
    if record.endpoint.method != rule.method.upper():
        return None
    if rule.required_purpose in labeled_purposes:
        return None
    return PurposeViolation(
        rule=rule.name, client_service=client_service, service=record.endpoint.service
    )
