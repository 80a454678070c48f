"""Place lookup backends: a deterministic fixture and a thin HTTP client.

Both backends expose the same four calls (find_place, places_nearby,
distance_matrix, get_place_attributes) and return plain dicts keyed by field
name, so the session layer can stay backend-agnostic.  The fixture backend is
a pure function of (dataset, query, coordinates, clock); tests rely on that.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable

import httpx

from .errors import ApiError, EmptyQuery, NotFound, SchemaError

DATASET_HEADER = "meep-places v1"


class FieldKind(str, enum.Enum):
    """Every field a place lookup can produce, in canonical display order.

    The order matters: result chips, log payloads, and export lines all list
    fields this way, so keep new kinds at the end of wherever they belong.
    """

    ADDRESS = "address"
    NAME = "name"
    LATITUDE = "latitude"
    LONGITUDE = "longitude"
    PLACE_ID = "place_id"
    STREET_NUMBER = "street_number"
    STREET_NAME = "street_name"
    NEIGHBORHOOD = "neighborhood"
    LOCALITY = "locality"
    DISTANCE = "distance"
    DURATION = "duration"
    RATING = "rating"
    OPEN_NOW = "open_now"


FIELD_ORDER: tuple[FieldKind, ...] = tuple(FieldKind)

# Fields whose values are numbers rather than strings.
FLOAT_FIELDS = frozenset({FieldKind.LATITUDE, FieldKind.LONGITUDE, FieldKind.RATING})

FieldValue = str | float

EARTH_RADIUS_KM = 6371.0088
KM_PER_MILE = 1.609344
FEET_PER_MILE = 5280
DEFAULT_SPEED_MPH = 18.0
DEFAULT_MATCH_THRESHOLD = 0.25
DEFAULT_NEARBY_LIMIT = 3

DAY_KEYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

_WORD = re.compile(r"\w+")


def haversine_miles(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two coordinate pairs, in miles."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    km = 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))
    return km / KM_PER_MILE


def format_distance(miles: float) -> str:
    """Render a distance the way result fields carry it.

    At or above 0.1 mi the unit is miles ("4.7 mi"); below that, feet
    ("141.1 feet").  One decimal either way.
    """
    if miles < 0.1:
        return f"{miles * FEET_PER_MILE:.1f} feet"
    return f"{miles:.1f} mi"


def format_duration(miles: float, speed_mph: float = DEFAULT_SPEED_MPH) -> str:
    """Travel time at a flat speed, rounded to whole minutes ("17 mins")."""
    minutes = round(miles / speed_mph * 60)
    return "1 min" if minutes == 1 else f"{minutes} mins"


def match_tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.casefold()))


@dataclass(frozen=True)
class Place:
    place_id: str
    name: str
    address: str
    latitude: float
    longitude: float
    locality: str | None = None
    street_number: str | None = None
    street_name: str | None = None
    neighborhood: str | None = None
    rating: float | None = None
    open_hours: dict[str, list[list[str]]] | None = None
    categories: tuple[str, ...] = ()
    coord_source: str = "authored"

    def search_tokens(self) -> set[str]:
        """Words this place is findable by: name, address, area names, and
        category labels."""
        toks = match_tokens(self.name) | match_tokens(self.address)
        for extra in (self.neighborhood, self.locality, *self.categories):
            if extra:
                toks |= match_tokens(extra)
        return toks

    def identity_fields(self) -> dict[str, str | float]:
        """Result fields describing the place itself, in canonical field order."""
        out: dict[str, str | float] = {
            "address": self.address,
            "name": self.name,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "place_id": self.place_id,
        }
        if self.street_number is not None:
            out["street_number"] = self.street_number
        if self.street_name is not None:
            out["street_name"] = self.street_name
        if self.neighborhood is not None:
            out["neighborhood"] = self.neighborhood
        if self.locality is not None:
            out["locality"] = self.locality
        return out


_RECORD_KEYS = {
    "place_id", "name", "address", "latitude", "longitude", "street_number",
    "street_name", "neighborhood", "locality", "rating", "open_hours",
    "categories", "coord_source",
}


def _place_from_record(record: dict, line: int) -> Place:
    unknown = set(record) - _RECORD_KEYS
    if unknown:
        raise SchemaError(f"unknown dataset keys {sorted(unknown)}", line=line)
    for key in ("place_id", "name", "address", "latitude", "longitude"):
        if key not in record:
            raise SchemaError(f"dataset record missing {key!r}", line=line)
    hours = record.get("open_hours")
    if hours is not None:
        for day, ranges in hours.items():
            if day not in DAY_KEYS:
                raise SchemaError(f"bad open_hours day {day!r}", line=line)
            for rng in ranges:
                if len(rng) != 2:
                    raise SchemaError("open_hours ranges must be [open, close]", line=line)
    return Place(
        place_id=record["place_id"],
        name=record["name"],
        address=record["address"],
        latitude=float(record["latitude"]),
        longitude=float(record["longitude"]),
        locality=record.get("locality"),
        street_number=record.get("street_number"),
        street_name=record.get("street_name"),
        neighborhood=record.get("neighborhood"),
        rating=record.get("rating"),
        open_hours=hours,
        categories=tuple(record.get("categories", ())),
        coord_source=record.get("coord_source", "authored"),
    )


def _place_to_record(place: Place) -> dict:
    rec: dict = {
        "place_id": place.place_id,
        "name": place.name,
        "address": place.address,
        "latitude": place.latitude,
        "longitude": place.longitude,
    }
    if place.street_number is not None:
        rec["street_number"] = place.street_number
    if place.street_name is not None:
        rec["street_name"] = place.street_name
    if place.neighborhood is not None:
        rec["neighborhood"] = place.neighborhood
    if place.locality is not None:
        rec["locality"] = place.locality
    if place.rating is not None:
        rec["rating"] = place.rating
    if place.open_hours is not None:
        rec["open_hours"] = place.open_hours
    if place.categories:
        rec["categories"] = list(place.categories)
    if place.coord_source != "authored":
        rec["coord_source"] = place.coord_source
    return rec


@dataclass
class PlacesDataset:
    places: list[Place] = field(default_factory=list)
    version: str = DATASET_HEADER

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for p in self.places:
            if p.place_id in seen:
                raise SchemaError(f"duplicate place_id {p.place_id!r}")
            seen.add(p.place_id)
        self._by_id = {p.place_id: p for p in self.places}

    def __len__(self) -> int:
        return len(self.places)

    def get(self, place_id: str) -> Place | None:
        return self._by_id.get(place_id)

    @classmethod
    def loads(cls, text: str) -> "PlacesDataset":
        lines = text.splitlines()
        if not lines or lines[0].strip() != DATASET_HEADER:
            raise SchemaError(f"dataset must start with {DATASET_HEADER!r}", line=1)
        places = []
        for i, raw in enumerate(lines[1:], start=2):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"bad JSON: {exc}", line=i) from exc
            places.append(_place_from_record(record, line=i))
        return cls(places=places)

    @classmethod
    def load(cls, path: str | Path) -> "PlacesDataset":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        lines = [DATASET_HEADER]
        for p in self.places:
            lines.append(json.dumps(_place_to_record(p), ensure_ascii=False))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def bundled_dataset_path() -> Path:
    return Path(__file__).parent / "data" / "places.txt"


def load_bundled_dataset() -> PlacesDataset:
    return PlacesDataset.load(bundled_dataset_path())


def _now() -> datetime:
    return datetime.now()


@dataclass
class RankedPlace:
    place: Place
    score: float
    distance_miles: float


class FixtureBackend:
    """Deterministic lookup over an authored dataset.

    Ranking is lexical: the fraction of query tokens present in the place's
    name + address + categories token set.  Ties break by distance from the
    given coordinates, then by place_id.
    """

    backend_id = "fixture"

    def __init__(
        self,
        dataset: PlacesDataset,
        match_threshold: float = DEFAULT_MATCH_THRESHOLD,
        nearby_limit: int = DEFAULT_NEARBY_LIMIT,
        speed_mph: float = DEFAULT_SPEED_MPH,
        clock: Callable[[], datetime] = _now,
    ):
        self.dataset = dataset
        self.match_threshold = match_threshold
        self.nearby_limit = nearby_limit
        self.speed_mph = speed_mph
        self.clock = clock

    @property
    def dataset_version(self) -> str:
        return self.dataset.version

    def rank(self, query: str, latitude: float, longitude: float) -> list[RankedPlace]:
        qtokens = match_tokens(query)
        if not qtokens:
            raise EmptyQuery("query has no matchable tokens")
        ranked = []
        for place in self.dataset.places:
            hits = len(qtokens & place.search_tokens())
            if hits == 0:
                continue
            score = hits / len(qtokens)
            if score < self.match_threshold:
                continue
            dist = haversine_miles(latitude, longitude, place.latitude, place.longitude)
            ranked.append(RankedPlace(place, score, dist))
        ranked.sort(key=lambda r: (-r.score, r.distance_miles, r.place.place_id))
        return ranked

    def _result(self, ranked: RankedPlace) -> dict[str, str | float]:
        out = ranked.place.identity_fields()
        out["distance"] = format_distance(ranked.distance_miles)
        out["duration"] = format_duration(ranked.distance_miles, self.speed_mph)
        return out

    def find_place(self, query: str, latitude: float, longitude: float) -> dict[str, str | float]:
        if not query.strip():
            raise EmptyQuery("empty query")
        ranked = self.rank(query, latitude, longitude)
        if not ranked:
            raise NotFound(f"no place matches {query!r}")
        return self._result(ranked[0])

    def places_nearby(
        self, query: str, latitude: float, longitude: float
    ) -> list[dict[str, str | float]]:
        if not query.strip():
            raise EmptyQuery("empty query")
        ranked = self.rank(query, latitude, longitude)
        if not ranked:
            raise NotFound(f"no place matches {query!r}")
        return [self._result(r) for r in ranked[: self.nearby_limit]]

    def _resolve_address(self, address: str) -> Place:
        wanted = address.strip().casefold()
        for place in self.dataset.places:
            if place.address.strip().casefold() == wanted:
                return place
        atokens = match_tokens(address)
        if atokens:
            best: tuple[float, str] | None = None
            best_place: Place | None = None
            for place in self.dataset.places:
                hits = len(atokens & match_tokens(place.address))
                score = hits / len(atokens)
                if score >= 0.5:
                    key = (-score, place.place_id)
                    if best is None or key < best:
                        best, best_place = key, place
            if best_place is not None:
                return best_place
        raise NotFound(f"address not in fixture: {address!r}")

    def distance_matrix(self, origin_address: str, destination_address: str) -> dict[str, str]:
        a = self._resolve_address(origin_address)
        b = self._resolve_address(destination_address)
        miles = haversine_miles(a.latitude, a.longitude, b.latitude, b.longitude)
        return {
            "distance": format_distance(miles),
            "duration": format_duration(miles, self.speed_mph),
        }

    def get_place_attributes(self, place_id: str) -> dict[str, str | float]:
        place = self.dataset.get(place_id)
        if place is None:
            raise NotFound(f"unknown place_id {place_id!r}")
        out: dict[str, str | float] = {}
        if place.rating is not None:
            out["rating"] = place.rating
        if place.open_hours is not None:
            out["open_now"] = "open" if self._is_open(place) else "closed"
        return out

    def _is_open(self, place: Place) -> bool:
        now = self.clock()
        ranges = (place.open_hours or {}).get(DAY_KEYS[now.weekday()], [])
        stamp = now.strftime("%H:%M")
        return any(start <= stamp < end for start, end in ranges)

    def reverse_address(self, latitude: float, longitude: float) -> str:
        """Address of the nearest fixture place; used to label raw coordinates."""
        if not self.dataset.places:
            raise NotFound("empty dataset")
        best = min(
            self.dataset.places,
            key=lambda p: (haversine_miles(latitude, longitude, p.latitude, p.longitude), p.place_id),
        )
        return best.address

    def geocode(self, address: str) -> tuple[float, float]:
        place = self._resolve_address(address)
        return place.latitude, place.longitude


class HttpPlacesBackend:
    """Client for a remote place service speaking the fixture HTTP contract.

    The endpoint is configurable; the API key rides in an X-Api-Key header.
    Transient failures retry up to `retries` times before surfacing ApiError.
    """

    backend_id = "live"
    dataset_version = "live"

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 10.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        headers = {"X-Api-Key": api_key} if api_key else {}
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout, headers=headers)
        if client is not None and api_key:
            self._client.headers.update(headers)
        self.retries = retries

    def _get(self, path: str, params: dict) -> object:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.get(path, params=params)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code == 404:
                raise NotFound(resp.text)
            if resp.status_code >= 500:
                last = ApiError(f"{path}: server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ApiError(f"{path}: status {resp.status_code}: {resp.text}")
            return resp.json()
        raise ApiError(f"{path}: giving up after {self.retries + 1} attempts: {last}")

    def find_place(self, query: str, latitude: float, longitude: float) -> dict[str, str | float]:
        if not query.strip():
            raise EmptyQuery("empty query")
        data = self._get("/find_place", {"query": query, "latitude": latitude, "longitude": longitude})
        return dict(data)

    def places_nearby(
        self, query: str, latitude: float, longitude: float
    ) -> list[dict[str, str | float]]:
        if not query.strip():
            raise EmptyQuery("empty query")
        data = self._get(
            "/places_nearby", {"query": query, "latitude": latitude, "longitude": longitude}
        )
        return [dict(item) for item in data]

    def distance_matrix(self, origin_address: str, destination_address: str) -> dict[str, str]:
        data = self._get(
            "/distance_matrix", {"origin": origin_address, "destination": destination_address}
        )
        return dict(data)

    def get_place_attributes(self, place_id: str) -> dict[str, str | float]:
        return dict(self._get("/attributes", {"place_id": place_id}))

    def reverse_address(self, latitude: float, longitude: float) -> str:
        data = self._get("/reverse", {"latitude": latitude, "longitude": longitude})
        return str(data["address"])

    def geocode(self, address: str) -> tuple[float, float]:
        data = self._get("/geocode", {"address": address})
        return float(data["latitude"]), float(data["longitude"])


def fixture_service(backend: FixtureBackend):
    """FastAPI app exposing a FixtureBackend over the HTTP contract.

    Used to exercise HttpPlacesBackend end to end without real credentials.
    """
    # Error responses are built explicitly: annotations in this module are
    # strings (future import), so a fastapi type in a signature here would
    # not resolve against the module globals.
    from fastapi import FastAPI
    from fastapi.responses import JSONResponse

    app = FastAPI()

    def _guard(fn):
        try:
            return fn()
        except NotFound as exc:
            return JSONResponse({"error": str(exc)}, status_code=404)
        except (EmptyQuery, ApiError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)

    @app.get("/find_place")
    def find_place(query: str, latitude: float, longitude: float):
        return _guard(lambda: backend.find_place(query, latitude, longitude))

    @app.get("/places_nearby")
    def places_nearby(query: str, latitude: float, longitude: float):
        return _guard(lambda: backend.places_nearby(query, latitude, longitude))

    @app.get("/distance_matrix")
    def distance_matrix(origin: str, destination: str):
        return _guard(lambda: backend.distance_matrix(origin, destination))

    @app.get("/attributes")
    def attributes(place_id: str):
        return _guard(lambda: backend.get_place_attributes(place_id))

    @app.get("/reverse")
    def reverse(latitude: float, longitude: float):
        return _guard(lambda: {"address": backend.reverse_address(latitude, longitude)})

    @app.get("/geocode")
    def geocode(address: str):
        def run():
            lat, lng = backend.geocode(address)
            return {"latitude": lat, "longitude": lng}

        return _guard(run)

    return app
