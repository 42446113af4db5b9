import pytest

from asrtriage.chat import ChatClient, ChatConfig, ChatTransportError


def test_retry_with_backoff_then_success():
    sleeps = []
    calls = []

    def transport(messages):
        calls.append(messages)
        if len(calls) < 3:
            raise ChatTransportError("flaky")
        return "ok"

    client = ChatClient(
        ChatConfig(max_retries=3, backoff_s=0.5), transport=transport, sleep=sleeps.append
    )
    assert client.complete([{"role": "user", "content": "hi"}]) == "ok"
    assert len(calls) == 3
    assert sleeps == [0.5, 1.0]  # exponential backoff


def test_exhausted_retries_raise():
    def transport(messages):
        raise ChatTransportError("down")

    client = ChatClient(ChatConfig(max_retries=2, backoff_s=0.1), transport=transport, sleep=lambda s: None)
    with pytest.raises(ChatTransportError, match="after 2 attempts"):
        client.complete([])


def test_http_transport_requires_endpoint():
    client = ChatClient(ChatConfig(max_retries=1), sleep=lambda s: None)
    with pytest.raises(ChatTransportError, match="no chat endpoint"):
        client.complete([])
