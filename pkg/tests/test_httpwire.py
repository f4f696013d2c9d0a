import pytest

from demoserve.httpwire import ResponseEndDetector, WireError, header_value, parse_request_line


def feed_in_chunks(detector: ResponseEndDetector, blob: bytes, step: int):
    for i in range(0, len(blob), step):
        detector.feed(blob[i : i + step])


CL_RESPONSE = b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\nhello"


@pytest.mark.parametrize("step", [1, 2, 3, 1000])
def test_content_length_detection(step):
    detector = ResponseEndDetector()
    feed_in_chunks(detector, CL_RESPONSE + b"EXTRA", step)
    assert detector.end == len(CL_RESPONSE)


def test_zero_length_body():
    detector = ResponseEndDetector()
    blob = b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n"
    detector.feed(blob)
    assert detector.end == len(blob)


@pytest.mark.parametrize("status", [204, 304])
def test_bodyless_statuses(status):
    detector = ResponseEndDetector()
    blob = f"HTTP/1.1 {status} X\r\nServer: t\r\n\r\n".encode()
    detector.feed(blob)
    assert detector.end == len(blob)


def test_head_request_has_no_body():
    detector = ResponseEndDetector(head_request=True)
    blob = b"HTTP/1.1 200 OK\r\nContent-Length: 100\r\n\r\n"
    detector.feed(blob)
    assert detector.end == len(blob)


@pytest.mark.parametrize("step", [1, 3, 1000])
def test_chunked_detection(step):
    detector = ResponseEndDetector()
    blob = (
        b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n"
        b"5\r\nhello\r\n3\r\nabc\r\n0\r\n\r\n"
    )
    feed_in_chunks(detector, blob + b"NEXT", step)
    assert detector.end == len(blob)


def test_no_length_means_until_eof():
    detector = ResponseEndDetector()
    detector.feed(b"HTTP/1.0 200 OK\r\nServer: old\r\n\r\nsome body")
    assert detector.end is None
    assert detector.until_eof


def test_interim_100_then_final():
    detector = ResponseEndDetector()
    blob = b"HTTP/1.1 100 Continue\r\n\r\n" + CL_RESPONSE
    detector.feed(blob)
    assert detector.end == len(blob)


def test_parse_request_line():
    assert parse_request_line(b"GET /x HTTP/1.1\r\nHost: a\r\n\r\n") == ("GET", "/x", "HTTP/1.1")
    with pytest.raises(WireError):
        parse_request_line(b"NONSENSE\r\n\r\n")


def test_header_value_case_insensitive():
    head = b"GET / HTTP/1.1\r\nContent-LENGTH: 42\r\nX: y\r\n\r\n"
    assert header_value(head, "content-length") == "42"
    assert header_value(head, "missing") is None
