import pytest

from policyfuzz.envs import Environment, EnvSpec, Trajectory, exhaustive_scan, make_env
from policyfuzz.policies import default_policy


class StubEnv(Environment):
    """One-dimensional integer inputs; reward and crash are functions of the input.

    ``reward_fn`` and ``crash_fn`` map the input integer to the episode outcome.
    Episodes last ``length`` states so coverage sees a real sequence.
    """

    spec = EnvSpec("stub", state_dim=2, horizon=10, n_actions=1)

    def __init__(self, reward_fn=lambda v: 0.0, crash_fn=lambda v: False, length=3, null_mutations=0):
        self.reward_fn = reward_fn
        self.crash_fn = crash_fn
        self.length = length
        self.null_mutations = null_mutations
        self.mutate_calls = 0
        self._v = None
        self._t = 0

    def reset(self, inp):
        (self._v,) = inp
        self._t = 0
        return (float(self._v), 0.0)

    def step(self, action):
        self._t += 1
        done = self._t >= self.length - 1
        reward = self.reward_fn(self._v) if done else 0.0
        return (float(self._v), float(self._t)), reward, done

    def oracle(self, trajectory: Trajectory) -> bool:
        return bool(self.crash_fn(int(trajectory.states[0, 0])))

    def sample_input(self, rng):
        return (int(rng.integers(0, 1000)),)

    def _mutate(self, inp, rng):
        self.mutate_calls += 1
        if self.mutate_calls <= self.null_mutations:
            return inp
        return (inp[0] + int(rng.integers(1, 5)),)


@pytest.fixture
def stub_env():
    return StubEnv


@pytest.fixture(scope="session")
def taxi_ground_truth():
    """Exhaustive fault set of the builtin Taxi policy (about half a minute)."""
    return exhaustive_scan(make_env("taxi"), default_policy("taxi"))



# acceptance criteria: every test marked ``criterion(n, title)`` feeds one summary line
_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by the test")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    entry = item.config.stash[_CRITERIA].setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter, config):
    criteria = config.stash[_CRITERIA]
    if not criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(criteria):
        c = criteria[n]
        line = f"criterion {n:>2} {'PASS' if c['ok'] else 'FAIL'}: {c['title']}"
        if c["details"]:
            line += " | " + "; ".join(c["details"])
        terminalreporter.write_line(line)
