"""
A minimal stdio language server for exercising the client.

Answers ``textDocument/completion`` with a fixed item list. Before replying
to ``initialize`` it sends a request of its own and waits for the answer,
as real servers do when asking for configuration.

Run as a script: ``python stub_language_server.py items.json``, where the
file holds ``{"items": [...], "ignore": [...]}``.
"""

import json
import sys
from typing import IO, Any, Iterable, Optional

CONFIGURATION_REQUEST_ID = 99


def _encode(obj: dict[str, Any]) -> bytes:
    body = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    return f"Content-Length: {len(body)}\r\n\r\n".encode("ascii") + body


def _read_message(reader: IO[bytes]) -> Optional[dict[str, Any]]:
    headers: dict[str, str] = {}
    while True:
        line = reader.readline()
        if not line:
            return None
        if line in (b"\r\n", b"\n"):
            break
        key, _, value = line.decode("utf-8", errors="replace").partition(":")
        headers[key.strip().lower()] = value.strip()
    body = reader.read(int(headers.get("content-length", "0")))
    if not body:
        return None
    message = json.loads(body.decode("utf-8"))
    assert isinstance(message, dict)  # nosec B101
    return message


def serve(
    reader: IO[bytes],
    writer: IO[bytes],
    items: list[dict[str, Any]],
    ignore: Iterable[str] = (),
    received: Optional[list[dict[str, Any]]] = None,
) -> int:
    """
    Serve one client until ``exit`` or end of input.

    Args:
        reader: Client-to-server stream
        writer: Server-to-client stream
        items: Completion items returned for every completion request
        ignore: Methods that are read but never answered
        received: If given, every incoming message is appended to it
    """
    ignored = set(ignore)

    def send(obj: dict[str, Any]) -> None:
        writer.write(_encode(obj))
        writer.flush()

    try:
        while True:
            message = _read_message(reader)
            if message is None:
                return 0
            if received is not None:
                received.append(message)
            method = message.get("method")
            rid = message.get("id")
            if method is None or method in ignored:
                continue

            if method == "initialize":
                send(
                    {
                        "jsonrpc": "2.0",
                        "id": CONFIGURATION_REQUEST_ID,
                        "method": "workspace/configuration",
                        "params": {"items": [{"section": "java"}]},
                    }
                )
                send({"jsonrpc": "2.0", "method": "window/logMessage", "params": {"type": 3, "message": "ready"}})
                while True:
                    reply = _read_message(reader)
                    if reply is None:
                        return 1
                    if received is not None:
                        received.append(reply)
                    if reply.get("id") == CONFIGURATION_REQUEST_ID and "result" in reply:
                        break
                send({"jsonrpc": "2.0", "id": rid, "result": {"capabilities": {"completionProvider": {}}}})
            elif method == "textDocument/completion":
                send({"jsonrpc": "2.0", "id": rid, "result": {"isIncomplete": False, "items": items}})
            elif method == "shutdown":
                send({"jsonrpc": "2.0", "id": rid, "result": None})
            elif method == "exit":
                return 0
            elif rid is not None:
                send({"jsonrpc": "2.0", "id": rid, "error": {"code": -32601, "message": f"unhandled {method}"}})
    finally:
        writer.close()


def main(argv: list[str]) -> int:
    with open(argv[1], encoding="utf-8") as f:
        table = json.load(f)
    return serve(sys.stdin.buffer, sys.stdout.buffer, table.get("items", []), table.get("ignore", ()))


if __name__ == "__main__":
    sys.exit(main(sys.argv))
