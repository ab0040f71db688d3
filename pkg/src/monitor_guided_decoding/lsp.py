"""
Language-server suggestion provider.

Speaks JSON-RPC 2.0 over a pair of byte streams with ``Content-Length``
framing. A background thread reads every incoming message; requests wait on
a condition for their response.
"""

import json
import logging
import os
import subprocess  # nosec B404
import threading
import time
from pathlib import Path
from typing import IO, Any, Optional

from .errors import ProviderError, ProviderTimeout
from .suggest import ProviderConfig, SuggestionQuery, completion_names
from .vocab import DEFAULT_DELIMITERS, DelimiterSet, SuggestionSet

logger = logging.getLogger(__name__)


def encode_message(message: dict[str, Any]) -> bytes:
    body = json.dumps(message, ensure_ascii=False).encode("utf-8")
    return f"Content-Length: {len(body)}\r\n\r\n".encode("ascii") + body


def read_message(reader: IO[bytes]) -> Optional[dict[str, Any]]:
    """
    Read one framed message.

    Returns:
        The decoded message, or None at end of stream

    Raises:
        ProviderError: On a malformed header or body
    """
    headers: dict[str, str] = {}
    while True:
        line = reader.readline()
        if not line:
            return None
        if line in (b"\r\n", b"\n"):
            break
        name, sep, value = line.decode("ascii", errors="replace").partition(":")
        if not sep:
            raise ProviderError(f"malformed header line: {line!r}")
        headers[name.strip().lower()] = value.strip()
    try:
        length = int(headers["content-length"])
    except (KeyError, ValueError):
        raise ProviderError(f"missing or invalid Content-Length in headers {headers}") from None
    body = b""
    while len(body) < length:
        chunk = reader.read(length - len(body))
        if not chunk:
            return None
        body += chunk
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProviderError(f"malformed message body: {e}") from e
    if not isinstance(message, dict):
        raise ProviderError("message must be a JSON object")
    return message


class JsonRpcTransport:
    """
    JSON-RPC client endpoint over two byte streams.

    Args:
        reader: Stream carrying the server's output
        writer: Stream feeding the server's input
    """

    def __init__(self, reader: IO[bytes], writer: IO[bytes]) -> None:
        self._reader = reader
        self._writer = writer
        self._next_id = 0
        self._responses: dict[int, dict[str, Any]] = {}
        # ids of timed-out requests; their late responses are dropped
        self._abandoned: set[int] = set()
        self._closed = False
        self._cond = threading.Condition()
        self._write_lock = threading.Lock()
        self._thread = threading.Thread(target=self._read_loop, name="lsp-reader", daemon=True)
        self._thread.start()

    def _send(self, message: dict[str, Any]) -> None:
        with self._write_lock:
            try:
                self._writer.write(encode_message(message))
                self._writer.flush()
            except (OSError, ValueError) as e:
                raise ProviderError(f"cannot write to language server: {e}") from e

    def _read_loop(self) -> None:
        try:
            while True:
                message = read_message(self._reader)
                if message is None:
                    break
                self._dispatch(message)
        except (OSError, ValueError, ProviderError) as e:
            logger.warning("language server stream failed: %s", e)
        finally:
            with self._cond:
                self._closed = True
                self._cond.notify_all()

    def _dispatch(self, message: dict[str, Any]) -> None:
        if "method" in message:
            if "id" in message:
                # server-initiated request: answer with a null result so it can proceed
                logger.debug("answering server request %s", message["method"])
                self._send({"jsonrpc": "2.0", "id": message["id"], "result": None})
            else:
                logger.debug("server notification %s", message["method"])
            return
        request_id = message.get("id")
        if isinstance(request_id, int):
            with self._cond:
                if request_id in self._abandoned:
                    self._abandoned.discard(request_id)
                    logger.debug("dropping late response to request %d", request_id)
                    return
                self._responses[request_id] = message
                self._cond.notify_all()

    def request(self, method: str, params: Any, timeout_s: float) -> Any:
        """Send a request and wait for its result."""
        with self._cond:
            self._next_id += 1
            request_id = self._next_id
        self._send({"jsonrpc": "2.0", "id": request_id, "method": method, "params": params})
        deadline = time.monotonic() + timeout_s
        with self._cond:
            while request_id not in self._responses:
                if self._closed:
                    raise ProviderError(f"language server closed the connection during {method}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self._abandoned.add(request_id)
                    break
                self._cond.wait(remaining)
            response = self._responses.pop(request_id, None)
        if response is None:
            self._cancel(request_id)
            raise ProviderTimeout(f"{method} timed out after {timeout_s:.1f}s")
        if "error" in response:
            error = response["error"] or {}
            raise ProviderError(f"{method} failed: {error.get('message', error)}")
        return response.get("result")

    def notify(self, method: str, params: Any) -> None:
        self._send({"jsonrpc": "2.0", "method": method, "params": params})

    def _cancel(self, request_id: int) -> None:
        try:
            self.notify("$/cancelRequest", {"id": request_id})
        except ProviderError as e:
            logger.debug("cannot cancel request %d: %s", request_id, e)

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def close(self) -> None:
        try:
            self._writer.close()
        except OSError:
            pass
        self._thread.join(timeout=1.0)


class LanguageServerProvider:
    """
    Suggestion provider backed by a language server.

    Protocol traffic is serialized: concurrent queries from several
    generations wait their turn on one lock.

    Args:
        transport: Connected JSON-RPC transport
        workspace_root: Repository the server analyses
        timeout_s: Per-request timeout
        process: Server process to reap on close, if this provider launched it
        delims: Delimiter set used to filter returned names
    """

    def __init__(
        self,
        transport: JsonRpcTransport,
        workspace_root: Path,
        timeout_s: float = 10.0,
        process: Optional[subprocess.Popen] = None,
        delims: DelimiterSet = DEFAULT_DELIMITERS,
    ) -> None:
        self.transport = transport
        self.workspace_root = Path(workspace_root)
        self.timeout_s = timeout_s
        self.process = process
        self.delims = delims
        self._documents: dict[str, tuple[int, str]] = {}
        self._initialized = False
        self._lock = threading.Lock()

    @classmethod
    def launch(cls, config: ProviderConfig) -> "LanguageServerProvider":
        """Start the configured server process and complete the handshake."""
        if config.workspace_root is None:
            raise ProviderError("lsp provider needs a workspace root")
        logger.info("launching language server: %s", " ".join(config.server_launch))
        try:
            process = subprocess.Popen(  # nosec B603
                config.server_launch,
                cwd=config.workspace_root,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as e:
            raise ProviderError(f"cannot launch language server {config.server_launch[0]}: {e}") from e
        assert process.stdout is not None and process.stdin is not None  # nosec B101
        provider = cls(
            JsonRpcTransport(process.stdout, process.stdin), config.workspace_root, config.timeout_s, process
        )
        try:
            provider.initialize()
        except ProviderError:
            provider.close()
            raise
        return provider

    def initialize(self) -> dict[str, Any]:
        """Run the initialize / initialized handshake; returns the server capabilities."""
        root = self.workspace_root.resolve()
        with self._lock:
            result = self.transport.request(
                "initialize",
                {
                    "processId": os.getpid(),
                    "rootUri": root.as_uri(),
                    "rootPath": str(root),
                    "workspaceFolders": [{"uri": root.as_uri(), "name": root.name}],
                    "capabilities": {
                        "textDocument": {
                            "completion": {"completionItem": {"snippetSupport": False}},
                            "synchronization": {"didSave": False},
                        }
                    },
                },
                self.timeout_s,
            )
            self.transport.notify("initialized", {})
            self._initialized = True
        return (result or {}).get("capabilities", {})

    def _require_initialized(self) -> None:
        if not self._initialized:
            raise ProviderError("language server not initialized")

    def open_document(self, file_uri: str, content: str) -> None:
        with self._lock:
            self._require_initialized()
            self._sync(file_uri, content)

    def _sync(self, file_uri: str, content: str) -> None:
        if file_uri not in self._documents:
            self.transport.notify(
                "textDocument/didOpen",
                {"textDocument": {"uri": file_uri, "languageId": "java", "version": 1, "text": content}},
            )
            self._documents[file_uri] = (1, content)
            return
        version, current = self._documents[file_uri]
        if current == content:
            return
        self.transport.notify(
            "textDocument/didChange",
            {"textDocument": {"uri": file_uri, "version": version + 1}, "contentChanges": [{"text": content}]},
        )
        self._documents[file_uri] = (version + 1, content)

    def query(self, q: SuggestionQuery) -> SuggestionSet:
        with self._lock:
            self._require_initialized()
            if q.file_uri not in self._documents:
                raise ProviderError(f"document not open: {q.file_uri}")
            self._sync(q.file_uri, q.content)
            result = self.transport.request(
                "textDocument/completion",
                {
                    "textDocument": {"uri": q.file_uri},
                    "position": q.position.to_dict(),
                    "context": {"triggerKind": 2, "triggerCharacter": "."},
                },
                self.timeout_s,
            )
        return SuggestionSet.from_names(completion_names(result, self.delims))

    def close(self) -> None:
        """Shut the server down; errors during shutdown are logged, not raised."""
        with self._lock:
            if self._initialized and not self.transport.closed:
                try:
                    self.transport.request("shutdown", None, self.timeout_s)
                    self.transport.notify("exit", None)
                except ProviderError as e:
                    logger.warning("language server shutdown failed: %s", e)
            self._initialized = False
            self._documents.clear()
            self.transport.close()
            if self.process is not None:
                try:
                    self.process.wait(timeout=self.timeout_s)
                except subprocess.TimeoutExpired:
                    logger.warning("language server did not exit, terminating")
                    self.process.kill()
                    self.process.wait()
                self.process = None
