// Alert stream with reconnect + reconciliation. On every (re)connect the
// owner re-fetches the alert list and merges it, so missed events during a
// drop cannot be lost and replays cannot duplicate (merge is by alert_id).

import type { AlertEvent } from "./types.js";

type WebSocketLike = {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
};

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface AlertStreamOptions {
  url: string;
  factory: WebSocketFactory;
  onEvent: (event: AlertEvent) => void;
  onConnect: () => void; // reconciliation hook: fetch + merge the full list
  onStatus?: (status: "connecting" | "open" | "closed") => void;
  backoffMs?: number[];
}

const DEFAULT_BACKOFF = [500, 1000, 2000, 5000, 10000];

export class AlertStream {
  private socket: WebSocketLike | null = null;
  private attempts = 0;
  private stopped = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private options: AlertStreamOptions) {}

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    if (this.socket) this.socket.close();
    this.socket = null;
  }

  /** Drop the socket without stopping; exercises the reconnect path. */
  interrupt(): void {
    if (this.socket) this.socket.close();
  }

  private connect(): void {
    if (this.stopped) return;
    this.options.onStatus?.("connecting");
    const socket = this.options.factory(this.options.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.options.onStatus?.("open");
      this.options.onConnect();
    };
    socket.onmessage = (message) => {
      try {
        const event = JSON.parse(String(message.data)) as AlertEvent;
        if (event && typeof event.alert_id === "string") {
          this.options.onEvent(event);
        }
      } catch {
        // a malformed frame never kills the stream
      }
    };
    socket.onerror = () => {
      // close always follows; reconnect happens there
    };
    socket.onclose = () => {
      this.options.onStatus?.("closed");
      if (this.stopped) return;
      const backoff = this.options.backoffMs ?? DEFAULT_BACKOFF;
      const delay = backoff[Math.min(this.attempts, backoff.length - 1)];
      this.attempts += 1;
      this.timer = setTimeout(() => this.connect(), delay);
    };
  }
}
