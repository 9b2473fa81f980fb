import pytest

from hawk.model import EndpointId, HttpMeta, Phase, Side, TrafficRecord


def make_record(
    request_id="r-1",
    phase=Phase.REQUEST,
    side=Side.CLIENT,
    timestamp=1000,
    method="POST",
    host="127.0.0.1:9000",
    path="/orders",
    service="orders",
    path_pattern=None,
    header_keys=("content-type",),
    payload_paths=("$.k",),
    payload_bytes=8,
):
    """Valid-by-default record; tests override single fields to break it."""
    return TrafficRecord(
        request_id=request_id,
        phase=phase,
        side=side,
        timestamp=timestamp,
        http=HttpMeta(protocol="HTTP/1.1", method=method, host=host, path=path),
        endpoint=EndpointId(
            service=service, method=method, path_pattern=path_pattern or path
        ),
        header_keys=frozenset(header_keys),
        payload_paths=frozenset(payload_paths),
        payload_bytes=payload_bytes,
    )


def exchange_records(request_id, client_service, server_service, path="/orders",
                     method="POST", paths=("$.k",), timestamp=1000, host=None,
                     payload_bytes=8):
    """All four stage records of one exchange, as the two sidecars emit them."""
    records = []
    for side, service in ((Side.CLIENT, client_service), (Side.SERVER, server_service)):
        for phase in (Phase.REQUEST, Phase.RESPONSE):
            records.append(
                make_record(
                    request_id=request_id,
                    phase=phase,
                    side=side,
                    timestamp=timestamp,
                    method=method,
                    host=host or "127.0.0.1:9000",
                    path=path,
                    service=service,
                    payload_paths=paths,
                    payload_bytes=payload_bytes,
                )
            )
    return records


@pytest.fixture
def record():
    return make_record()
