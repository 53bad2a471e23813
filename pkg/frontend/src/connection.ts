/** Websocket session with auto-reconnect and schema-version handling. */

import {
  ClientMessage,
  parseServerMessage,
  ServerState,
} from "./protocol.js";

export type ConnectionStatus =
  | "connecting"
  | "open"
  | "closed"
  | "incompatible";

/** Minimal surface of a browser WebSocket, injectable for tests. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ConnectionEvents {
  onState(state: ServerState): void;
  onStatus(status: ConnectionStatus, detail?: string): void;
}

export interface ConnectionOptions {
  /** Reconnect backoff start, doubling up to maxBackoffMs. */
  backoffMs?: number;
  maxBackoffMs?: number;
  socketFactory?: (url: string) => SocketLike;
  schedule?: (fn: () => void, delayMs: number) => void;
}

export class Connection {
  private socket: SocketLike | null = null;
  private backoff: number;
  private closedByUser = false;
  status: ConnectionStatus = "closed";

  private readonly backoff0: number;
  private readonly maxBackoff: number;
  private readonly factory: (url: string) => SocketLike;
  private readonly schedule: (fn: () => void, delayMs: number) => void;

  constructor(
    readonly url: string,
    readonly events: ConnectionEvents,
    opts: ConnectionOptions = {},
  ) {
    this.backoff0 = opts.backoffMs ?? 500;
    this.maxBackoff = opts.maxBackoffMs ?? 8000;
    this.backoff = this.backoff0;
    this.factory =
      opts.socketFactory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    this.closedByUser = false;
    this.setStatus("connecting");
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.backoff = this.backoff0;
      this.setStatus("open");
    };
    sock.onmessage = (ev) => this.handleRaw(ev.data);
    sock.onerror = () => {
      /* onclose follows; nothing to do */
    };
    sock.onclose = () => {
      this.socket = null;
      if (this.status === "incompatible" || this.closedByUser) return;
      this.setStatus("closed");
      const delay = this.backoff;
      this.backoff = Math.min(this.backoff * 2, this.maxBackoff);
      this.schedule(() => {
        if (!this.closedByUser && this.status !== "incompatible") this.connect();
      }, delay);
    };
  }

  private handleRaw(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg.kind === "state") {
      this.events.onState(msg.state);
    } else if (msg.kind === "version-mismatch") {
      this.setStatus(
        "incompatible",
        `server speaks protocol ${String(msg.got)}; this panel requires 1`,
      );
      this.socket?.close();
    } else if (msg.kind === "error") {
      if (/protocol version/i.test(msg.message)) {
        this.setStatus("incompatible", msg.message);
        this.socket?.close();
      } else {
        this.events.onStatus(this.status, msg.message);
      }
    }
    // unknown messages are ignored
  }

  send(msg: ClientMessage): boolean {
    if (this.status !== "open" || !this.socket) return false;
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    this.socket = null;
    this.setStatus("closed");
  }

  private setStatus(status: ConnectionStatus, detail?: string): void {
    this.status = status;
    this.events.onStatus(status, detail);
  }
}
