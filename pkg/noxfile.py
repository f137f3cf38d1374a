import nox


@nox.session(python=["3.9", "3.10", "3.11", "3.12"])
def test(session):
    session.install(".[tests]")
    session.run("pytest")


@nox.session(python=["3.11"])
def bench(session):
    session.install(".[tests,fast]")
    session.run("pytest", "-m", "bench", "--no-cov")
