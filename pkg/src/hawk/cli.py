"""Command-line entry points: demo stack management, load generation,
overhead benchmarking, canary simulation, and standalone servers.
"""
from __future__ import annotations

import json
import logging
import os
import signal
import sys
import threading

import click
import requests

from .core import CoreConfig, CoreRegistry, serve_core
from .harness.demo import demo_up as start_demo, wait_settled
from .harness.loadgen import LoadProfile, bench_overhead, build_payload, run_load
from .harness.scenario import canary_simulate, load_scenario
from .harness.topology import decode_topology
from .httpkit import HttpServerHandle, Request, Response, Router
from .model import HawkError
from .proxy import InterceptProxy, load_proxy_config
from .store import SqliteStore

DEFAULT_STATE_FILE = "hawk-demo.json"

log = logging.getLogger(__name__)


def _read_state(state_file: str) -> dict:
    try:
        with open(state_file) as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise click.ClickException(
            f"no running demo found (missing {state_file}); run `hawk demo up` first"
        )


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


# -- demo -------------------------------------------------------------------


@main.group()
def demo() -> None:
    """Start or stop the toy shop demo stack."""


@demo.command("up")
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--sentinel", default="SENTINEL", show_default=True)
@click.option("--db", "db_path", default=None, help="SQLite path for the core store.")
def demo_up_cmd(topology_file, state_file, sentinel, db_path) -> None:
    """Start toy services, proxies, collector, and core; block until stopped."""
    if os.path.exists(state_file):
        try:
            control = _read_state(state_file).get("control")
            if control and requests.get(control + "/control/state", timeout=1).ok:
                raise click.ClickException("PORT_IN_USE: a demo is already running")
        except requests.RequestException:
            pass  # stale state file

    topology = None
    if topology_file:
        with open(topology_file) as handle:
            topology = decode_topology(json.load(handle))
    try:
        handle = start_demo(topology=topology, sentinel=sentinel, db_path=db_path)
    except HawkError as exc:
        raise click.ClickException(f"{exc.code}: {exc}")

    stop_event = threading.Event()
    router = Router()
    router.add("POST", "/control/shutdown", lambda _r: (stop_event.set(), Response.json({"status": "stopping"}))[1])
    router.add("GET", "/control/state", lambda _r: Response.json(handle.state()))
    control_server = HttpServerHandle(router).start()

    state = handle.state() | {"control": control_server.url}
    with open(state_file, "w") as out:
        json.dump(state, out, indent=2)
    click.echo(json.dumps(state, indent=2))

    signal.signal(signal.SIGINT, lambda *_: stop_event.set())
    signal.signal(signal.SIGTERM, lambda *_: stop_event.set())
    stop_event.wait()
    handle.stop()
    control_server.stop()
    os.unlink(state_file)


@demo.command("down")
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
def demo_down_cmd(state_file) -> None:
    state = _read_state(state_file)
    try:
        requests.post(state["control"] + "/control/shutdown", timeout=5)
    except requests.RequestException as exc:
        raise click.ClickException(f"demo control unreachable: {exc}")
    click.echo('{"status": "stopped"}')


# -- load / bench -----------------------------------------------------------


def _profile(rps, duration, clients, payload_bytes) -> LoadProfile:
    try:
        return LoadProfile(
            requests_per_second=rps,
            duration_seconds=duration,
            concurrent_clients=clients,
            payload_bytes=payload_bytes,
        )
    except HawkError as exc:
        raise click.ClickException(f"{exc.code}: {exc}")


@main.command("load")
@click.option("--rps", type=float, required=True)
@click.option("--duration", type=float, required=True)
@click.option("--clients", type=int, default=16, show_default=True)
@click.option("--payload-bytes", type=int, default=1024, show_default=True)
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--out", "out_file", default="hawk-load-report.json", show_default=True)
@click.option("--settle/--no-settle", default=True, show_default=True,
              help="Wait for records to reach the core before reporting.")
def load_cmd(rps, duration, clients, payload_bytes, state_file, out_file, settle) -> None:
    """Generate open-loop load against the running demo's entry proxy."""
    state = _read_state(state_file)
    profile = _profile(rps, duration, clients, payload_bytes)
    report = run_load(
        state["entry"] + "/checkout",
        profile,
        body=build_payload(profile.payload_bytes),
    )
    if settle:
        wait_settled(state["core"], state["collector"])
    payload = report.as_dict()
    with open(out_file, "w") as out:
        json.dump(report.as_dict(include_samples=True), out)
    click.echo(json.dumps(payload, indent=2))
    if report.succeeded == 0:
        sys.exit(1)


@main.group()
def bench() -> None:
    """Comparative benchmarks."""


@bench.command("overhead")
@click.option("--rps", type=float, default=50, show_default=True)
@click.option("--duration", type=float, default=10, show_default=True)
@click.option("--clients", type=int, default=16, show_default=True)
@click.option("--payload-bytes", type=int, default=1024, show_default=True)
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--samples", "samples_file", default="hawk-bench-samples.json", show_default=True)
def bench_overhead_cmd(rps, duration, clients, payload_bytes, state_file, samples_file) -> None:
    """Run identical load with and without interception; report the ratios."""
    state = _read_state(state_file)
    profile = _profile(rps, duration, clients, payload_bytes)
    report = bench_overhead(
        state["direct"] + "/checkout",
        state["entry"] + "/checkout",
        profile,
        samples_file,
    )
    click.echo(json.dumps(report, indent=2))


# -- canary -----------------------------------------------------------------


@main.group()
def canary() -> None:
    """Canary release analysis."""


@canary.command("simulate")
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--log", "log_file", default=None, help="Write the decision log (NDJSON) here.")
def canary_simulate_cmd(scenario_file, log_file) -> None:
    """Run a two-version canary scenario; exit 0 on promotion, 2 on rollback."""
    try:
        scenario = load_scenario(scenario_file)
        final, log_text = canary_simulate(scenario)
    except HawkError as exc:
        raise click.ClickException(f"{exc.code}: {exc}")
    if log_file:
        with open(log_file, "w") as out:
            out.write(log_text)
    else:
        click.echo(log_text, nl=False)
    click.echo(json.dumps({"outcome": final.phase.value, "iterations": final.iteration}))
    sys.exit(0 if final.phase.value == "promoted" else 2)


# -- standalone servers -----------------------------------------------------


@main.group()
def core() -> None:
    """Core registry server."""


@core.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=0, show_default=True)
@click.option("--db", "db_path", default=None, help="SQLite path (in-memory store if omitted).")
def core_serve_cmd(host, port, db_path) -> None:
    """Serve the registry REST API; prints the bound address as JSON."""
    store = SqliteStore(db_path) if db_path else None
    registry = CoreRegistry(store=store, config=CoreConfig())
    server = serve_core(registry, host=host, port=port)
    click.echo(json.dumps({"url": server.url, "port": server.port}), nl=True)
    sys.stdout.flush()
    stop_event = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop_event.set())
    signal.signal(signal.SIGTERM, lambda *_: stop_event.set())
    stop_event.wait()
    server.stop()


@main.group()
def proxy() -> None:
    """Intercepting reverse proxy."""


@proxy.command("serve")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None,
              help="TOML config; HAWK_PROXY_* environment variables override.")
def proxy_serve_cmd(config_file) -> None:
    try:
        config = load_proxy_config(config_file)
    except (ValueError, HawkError) as exc:
        raise click.ClickException(str(exc))
    instance = InterceptProxy(config).start()
    click.echo(json.dumps({"url": instance.url, "port": instance.port}))
    sys.stdout.flush()
    stop_event = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop_event.set())
    signal.signal(signal.SIGTERM, lambda *_: stop_event.set())
    stop_event.wait()
    instance.stop()


if __name__ == "__main__":
    main()
