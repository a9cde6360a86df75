// Client-side stores. Invariant: the console is never the source of truth.
// Every mutation lands here only after the server confirmed it, and the
// queue keeps the exact server ordering (no client-side re-sorting).

import type { AlertEvent, AlertState, QueueItem } from "./types.js";

export class AlertBoard {
  private byId = new Map<string, AlertEvent>();
  private arrival: string[] = []; // first-seen order, stable across merges

  /** Apply one server-confirmed event (socket push or mutation response). */
  upsert(event: AlertEvent): void {
    if (!this.byId.has(event.alert_id)) {
      this.arrival.push(event.alert_id);
    }
    this.byId.set(event.alert_id, event);
  }

  /** Reconciliation after (re)connect: idempotent merge by alert_id. */
  merge(events: AlertEvent[]): void {
    for (const event of events) this.upsert(event);
  }

  get(alertId: string): AlertEvent | undefined {
    return this.byId.get(alertId);
  }

  count(): number {
    return this.byId.size;
  }

  /** Column content: newest first within a state. */
  column(state: AlertState): AlertEvent[] {
    const rows = this.arrival
      .map((id) => this.byId.get(id)!)
      .filter((alert) => alert.state === state);
    return rows.sort((a, b) => b.created_at.localeCompare(a.created_at));
  }
}

export class EnrollmentQueue {
  private rows: QueueItem[] = [];

  /** Replace with the server response, order untouched. */
  replace(rows: QueueItem[]): void {
    this.rows = rows.slice();
  }

  items(): QueueItem[] {
    return this.rows.slice();
  }

  ids(): string[] {
    return this.rows.map((row) => row.patient_id);
  }
}

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface Toast {
  kind: "error" | "info";
  message: string;
}
