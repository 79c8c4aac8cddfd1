import pytest

from dialektor import seed
from dialektor.transcript import Conversation, Direction, Segment

# criterion number -> (title, outcome); filled by the acceptance tests
_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, None])
    failed = report.failed or (report.when == "call" and report.skipped)
    if failed:
        entry[1] = "FAIL"
    elif report.when == "call" and entry[1] is None:
        entry[1] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, result = _criteria[number]
        terminalreporter.write_line(f"{result or 'FAIL'} criterion {number}: {title}")


@pytest.fixture(scope="session")
def seed_kb():
    return seed.load_seed_kb()


def conv(*pairs, stream_id="t", src_ip=None) -> Conversation:
    """Build a conversation from (direction letter, bytes) pairs."""
    return Conversation(stream_id, tuple(Segment(Direction(d), b) for d, b in pairs), src_ip=src_ip)


# the worked state-conversion example, as a capture
CONVERSION = conv(
    ("S", b"220 hostname\r\n"),
    ("C", b"EHLO [127.0.0.1]\r\n"),
    ("S", b"250 Ok\r\n"),
    ("C", b"Mail FROM:<send@mail.pl>\r\n"),
    ("S", b"250 2.1.0 Ok\r\n"),
    ("C", b"Rcpt To: <recipient>\r\n"),
    ("S", b"250 2.1.5 Ok\r\n"),
    ("C", b"DATA\r\n"),
    ("S", b"354 Ok\r\n"),
    ("C", b"My test message.\r\n.\r\n"),
    ("S", b"250 2.0.0 Ok\r\n"),
    ("C", b"quit\r\n"),
    ("S", b"221 2.0.0 Bye\r\n"),
    stream_id="conversion",
)

CONVERSION_STATES = [
    "220",
    "EHLO space [ IPv4 ] <CR> <LF>",
    "250",
    "Mail space FROM : < email > <CR> <LF>",
    "250 2.1.0",
    "Rcpt space To : space < text > <CR> <LF>",
    "250 2.1.5",
    "DATA <CR> <LF>",
    "354",
    "message",
    "250 2.0.0",
    "quit <CR> <LF>",
    "221 2.0.0",
]

# the plain conversation listing used to introduce the protocol
LISTING = conv(
    ("S", b"220 smtp.server.com\r\n"),
    ("C", b"EHLO my.example.com\r\n"),
    ("S", b"250 smtp.server.com\r\n"),
    ("C", b"MAIL FROM:<sender@example.com>\r\n"),
    ("S", b"250 2.1.0 Ok\r\n"),
    ("C", b"RCPT TO:<recipient@server.com>\r\n"),
    ("S", b"250 2.1.5 Ok\r\n"),
    ("C", b"DATA\r\n"),
    ("S", b"354\r\n"),
    ("C", b"Test message.\r\n.\r\n"),
    ("S", b"250 2.0.0 Ok\r\n"),
    ("C", b"QUIT\r\n"),
    ("S", b"221 2.0.0 Bye\r\n"),
    stream_id="listing",
)

LISTING_STATES = [
    "220",
    "EHLO space domain <CR> <LF>",
    "250",
    "MAIL space FROM : < email > <CR> <LF>",
    "250 2.1.0",
    "RCPT space TO : < email > <CR> <LF>",
    "250 2.1.5",
    "DATA <CR> <LF>",
    "354",
    "message",
    "250 2.0.0",
    "QUIT <CR> <LF>",
    "221 2.0.0",
]
