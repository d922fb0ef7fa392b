"""End-to-end CLI coverage: every subcommand against a template."""

import json

import pytest

from cloudperim.cli import EXIT_BAD_INPUT, EXIT_OK, EXIT_POLICY, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_eval_allow_exit_zero(capsys):
    code, out, _ = run(
        capsys,
        "eval", "--scenario", "fig1-lift-shift", "--from", "vm:green-a",
        "--principal", "sa:green-a", "--to", "svc:yellow-pay", "--method", "connect",
    )
    assert code == EXIT_OK
    assert "decision: ALLOW" in out


def test_eval_deny_exit_three(capsys):
    code, out, _ = run(
        capsys,
        "eval", "--scenario", "fig1-lift-shift", "--from", "yellow",
        "--principal", "sa:yellow-pay", "--to", "INTERNET",
    )
    assert code == EXIT_POLICY
    assert "DENY (GATEWAY)" in out


def test_eval_records_mode_fields(capsys):
    code, out, _ = run(
        capsys,
        "eval", "--scenario", "fig1-lift-shift", "--from", "green",
        "--principal", "sa:green-a", "--to", "yellow-pay", "--output", "records",
    )
    assert code == EXIT_OK
    lines = [json.loads(line) for line in out.strip().splitlines()]
    assert len(lines) == 10
    assert list(lines[0].keys()) == ["step", "point", "verdict", "rule", "reason"]
    assert lines[0]["point"] == "ROUTE"


def test_validate_clean_template(capsys):
    code, out, _ = run(capsys, "validate", "--scenario", "fig4-landing-point")
    assert code == EXIT_OK
    assert "0 violation(s)" in out


def test_validate_dirty_file(tmp_path, capsys):
    doc = tmp_path / "bad.yaml"
    doc.write_text(
        """
name: dirty
hierarchy:
  - {id: org, kind: organization}
  - {id: prj, kind: project, parent: org}
networks:
  segments:
    - {id: a, project: prj, routability: routable, cidrs: [10.0.0.0/16]}
    - {id: b, project: prj, routability: routable, cidrs: [10.0.0.0/16]}
"""
    )
    code, out, _ = run(capsys, "validate", "--scenario", str(doc))
    assert code == EXIT_POLICY
    assert "CIDR_OVERLAP" in out


def test_parse_errors_exit_two(tmp_path, capsys):
    doc = tmp_path / "broken.yaml"
    doc.write_text("name: x\nhierarchy:\n  - {id: prj, kind: project, parent: ghost}\n")
    code, _, err = run(capsys, "validate", "--scenario", str(doc))
    assert code == EXIT_BAD_INPUT
    assert "UNKNOWN_REF" in err


def test_matrix_human_and_records(capsys):
    code, out, _ = run(capsys, "matrix", "--scenario", "fig10-zero-trust")
    assert code == EXIT_OK and "svc-a.read" in out
    code, out, _ = run(
        capsys, "matrix", "--scenario", "fig10-zero-trust", "--output", "records",
        "--principals", "sa:a", "--methods", "read",
    )
    assert code == EXIT_OK
    rows = [json.loads(line) for line in out.strip().splitlines()]
    assert all(row["principal"] == "sa:a" and row["method"] == "read" for row in rows)
    assert {"principal", "source", "target", "method", "verdict", "reason"} == set(rows[0])


def test_exfil_empty_exits_zero(capsys):
    code, out, _ = run(
        capsys, "exfil", "--scenario", "fig1-lift-shift", "--tag", "pci:true", "--perimeter", "yellow"
    )
    assert code == EXIT_OK
    assert "no escape chains" in out


def test_exfil_chains_exit_three(tmp_path, capsys):
    from cloudperim import builtin_scenario, serialize_scenario
    import dataclasses
    from cloudperim import model as m

    s = builtin_scenario("fig1-lift-shift")
    allow = m.GatewayRule(id="inj", src_zone="yellow", dst_zone="INTERNET", action=m.RuleAction.ALLOW)
    edges = tuple(
        dataclasses.replace(e, gateway_rules=(allow,) + e.gateway_rules)
        if e.id == "gw-yellow-inet" else e
        for e in s.edges
    )
    doc = tmp_path / "leaky.yaml"
    doc.write_text(serialize_scenario(dataclasses.replace(s, edges=edges)))
    code, out, _ = run(
        capsys, "exfil", "--scenario", str(doc), "--tag", "pci:true", "--perimeter", "yellow",
        "--output", "records",
    )
    assert code == EXIT_POLICY
    chains = [json.loads(line) for line in out.strip().splitlines()]
    assert chains and all(c["escape"] == "INTERNET" for c in chains)


def test_blast(capsys):
    code, out, _ = run(capsys, "blast", "--scenario", "fig10-zero-trust", "--workload", "app-a")
    assert code == EXIT_OK
    assert "svc-b.read" in out
    code, out, _ = run(
        capsys, "blast", "--scenario", "fig10-zero-trust", "--workload", "app-a",
        "--output", "records",
    )
    entries = [json.loads(line) for line in out.strip().splitlines()]
    assert {"workload", "service", "method", "hops"} == set(entries[0])


def test_lint_clean_template_exits_zero(capsys):
    code, out, _ = run(capsys, "lint", "--scenario", "fig4-landing-point")
    assert code == EXIT_OK
    assert "0 error(s)" in out


def test_lint_records(capsys):
    code, out, _ = run(capsys, "lint", "--scenario", "fig1-lift-shift", "--output", "records")
    assert code == EXIT_OK  # warns only
    findings = [json.loads(line) for line in out.strip().splitlines()]
    assert findings and {"code", "severity", "subject", "message", "citation"} == set(findings[0])


def test_compile_and_verify_compile(capsys):
    code, out, _ = run(
        capsys, "compile", "--scenario", "fig4-landing-point", "--perimeter", "yellow",
        "--mechanism", "hybrid",
    )
    assert code == EXIT_OK
    assert "hier-deny-internet" in out
    code, out, _ = run(
        capsys, "verify-compile", "--scenario", "fig4-landing-point", "--perimeter", "yellow",
        "--mechanism", "hybrid",
    )
    assert code == EXIT_OK
    assert "0 divergence(s)" in out
    code, out, _ = run(
        capsys, "verify-compile", "--scenario", "fig4-landing-point", "--perimeter", "yellow",
        "--mechanism", "lift-shift", "--output", "records",
    )
    assert code == EXIT_POLICY
    divergences = [json.loads(line) for line in out.strip().splitlines()]
    assert all(d["class"].startswith("EXPECTED") for d in divergences)


def test_scenarios_list_has_ten_templates(capsys):
    code, out, _ = run(capsys, "scenarios", "list")
    assert code == EXIT_OK
    names = out.strip().splitlines()
    assert len(names) == 10
    assert names[0] == "fig1-lift-shift"


def test_scenarios_show_round_trips(capsys):
    code, out, _ = run(capsys, "scenarios", "show", "fig10-zero-trust")
    assert code == EXIT_OK
    from cloudperim import builtin_scenario, parse_scenario

    assert parse_scenario(out) == builtin_scenario("fig10-zero-trust")


def test_unknown_flag_is_an_error(capsys):
    code, _, _ = run(capsys, "lint", "--scenario", "fig1-lift-shift", "--sideways")
    assert code == EXIT_BAD_INPUT


def test_unknown_template_exits_two(capsys):
    code, _, err = run(capsys, "lint", "--scenario", "fig99-nope")
    assert code == EXIT_BAD_INPUT
    assert "error:" in err


def test_unknown_flow_entity_exits_two(capsys):
    code, _, err = run(
        capsys, "eval", "--scenario", "fig1-lift-shift", "--from", "green",
        "--principal", "ghost", "--to", "yellow-pay",
    )
    assert code == EXIT_BAD_INPUT
    assert "error:" in err


@pytest.mark.parametrize("serverless_missing_connector", [True])
def test_compile_unresolvable_member_exits_two(tmp_path, capsys, serverless_missing_connector):
    doc = tmp_path / "srvless.yaml"
    doc.write_text(
        """
name: srvless
hierarchy:
  - {id: org, kind: organization}
  - {id: prj, kind: project, parent: org}
networks:
  segments:
    - {id: fn-net, project: prj, routability: non-routable, cidrs: [100.64.0.0/24]}
services:
  specs:
    - {id: fn, project: prj, segment: fn-net, layer: l7, fqdn: fn.internal, compute: serverless, auth_mode: perimeter-trusting}
perimeters:
  - {id: P, name: P, members: {projects: [prj]}, mechanisms: [data-plane-perimeter]}
"""
    )
    code, _, err = run(
        capsys, "compile", "--scenario", str(doc), "--perimeter", "P", "--mechanism", "lift-shift"
    )
    assert code == EXIT_BAD_INPUT
    assert "vpc-connector" in err
