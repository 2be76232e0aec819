def pytest_runtest_logreport(report):
    # one visible line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else (
            "SKIP" if report.skipped else "FAIL")
        print(f"\nACCEPTANCE {name}: {outcome}")
    elif report.when == "setup" and report.skipped \
            and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: SKIP")
