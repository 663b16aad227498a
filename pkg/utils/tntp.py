import re
from pathlib import Path
from typing import List, NamedTuple

from models.network import AffineCost, BPRCost, CostFunction, DemandEntry, DemandTable, Network
from services.errors import DataFileError

_PAIR = re.compile(r"(\S+)\s*:\s*([^;\s]+)\s*;")


class LinkRecord(NamedTuple):
    line: int
    tail: str
    head: str
    cost_fn: CostFunction


def _skip(line: str) -> bool:
    stripped = line.strip()
    return not stripped or stripped.startswith("~") or stripped.startswith("<")


def _number(token: str, path: Path, line_no: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataFileError(f"expected a number for {what}, got '{token}'", str(path), line_no)


def parse_link_file(path: Path) -> List[LinkRecord]:
    """
    Parse link records.

    BPR:    tail head capacity free_flow_time [alpha beta] ;
    Affine: tail head affine a b ;
    """
    records = []
    with open(path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            if _skip(line):
                continue
            body = line.strip()
            if not body.endswith(";"):
                raise DataFileError("link record must end with ';'", str(path), line_no)
            tokens = body[:-1].split()
            if len(tokens) < 4:
                raise DataFileError(
                    f"link record needs at least 4 fields, got {len(tokens)}",
                    str(path),
                    line_no,
                )
            tail, head = tokens[0], tokens[1]
            try:
                if tokens[2].lower() == "affine":
                    if len(tokens) != 5:
                        raise DataFileError(
                            "affine record must be 'tail head affine a b ;'", str(path), line_no
                        )
                    cost_fn = AffineCost(
                        a=_number(tokens[3], path, line_no, "a"),
                        b=_number(tokens[4], path, line_no, "b"),
                    )
                else:
                    if len(tokens) not in (4, 6):
                        raise DataFileError(
                            "BPR record must be 'tail head capacity free_flow_time [alpha beta] ;'",
                            str(path),
                            line_no,
                        )
                    params = {
                        "capacity": _number(tokens[2], path, line_no, "capacity"),
                        "t0": _number(tokens[3], path, line_no, "free_flow_time"),
                    }
                    if len(tokens) == 6:
                        params["alpha"] = _number(tokens[4], path, line_no, "alpha")
                        params["beta"] = _number(tokens[5], path, line_no, "beta")
                    cost_fn = BPRCost(**params)
            except ValueError as e:
                # pydantic range checks (t0 > 0, capacity > 0, ...)
                raise DataFileError(f"invalid link parameters: {e}", str(path), line_no)
            records.append(LinkRecord(line_no, tail, head, cost_fn))

    if not records:
        raise DataFileError("no link records found", str(path))
    return records


def parse_trips_file(path: Path) -> List[DemandEntry]:
    """Parse 'Origin o' blocks of 'd : demand;' pairs."""
    entries = []
    origin = None
    with open(path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            if _skip(line):
                continue
            body = line.strip()
            if body.startswith("Origin"):
                parts = body.split()
                if len(parts) != 2:
                    raise DataFileError("expected 'Origin <node>'", str(path), line_no)
                origin = parts[1]
                continue
            if origin is None:
                raise DataFileError("demand pair before any 'Origin' header", str(path), line_no)
            pairs = _PAIR.findall(body)
            if not pairs or _PAIR.sub("", body).strip():
                raise DataFileError(f"malformed demand line '{body}'", str(path), line_no)
            for destination, value in pairs:
                amount = _number(value, path, line_no, "demand")
                if amount < 0:
                    raise DataFileError(f"negative demand {amount}", str(path), line_no)
                entries.append(DemandEntry(origin=origin, destination=destination, demand=amount))
    return entries


def write_link_file(net: Network, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as file:
        file.write(f"~ {net.name}: {len(net.nodes)} nodes, {net.num_links} links\n")
        for link in net.links:
            fn = link.cost_fn
            if isinstance(fn, AffineCost):
                fields = ["affine", repr(fn.a), repr(fn.b)]
            else:
                fields = [repr(fn.capacity), repr(fn.t0), repr(fn.alpha), repr(fn.beta)]
            file.write(" ".join([link.tail, link.head, *fields]) + " ;\n")


def write_trips_file(demand: DemandTable, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as file:
        file.write(f"~ total demand {demand.total:g}\n")
        origin = None
        for entry in demand.entries:
            if entry.origin != origin:
                origin = entry.origin
                file.write(f"Origin {origin}\n")
            file.write(f"    {entry.destination} : {entry.demand!r};\n")
