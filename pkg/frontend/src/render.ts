// DOM builders: data in, elements out. No fetches, no state here.

import type { AlertEvent, PatientDetail, QueueItem } from "./types.js";

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface QueueActions {
  onEnroll: (patientId: string) => void;
  onDecline: (patientId: string) => void;
  onDetail: (patientId: string) => void;
}

export function renderQueue(rows: QueueItem[], actions: QueueActions): HTMLElement {
  const list = el("div", "queue");
  if (rows.length === 0) {
    list.appendChild(el("p", "empty", "No candidates. Load a cohort and a model, then refresh."));
    return list;
  }
  for (const row of rows) {
    const card = el("div", `queue-row enrollment-${row.enrollment.toLowerCase()}`);
    card.dataset.patientId = row.patient_id;

    const rank = el("span", "rank", `#${row.rank}`);
    const who = el("span", "patient-id", row.patient_id);
    const probability = el("span", "probability", row.probability.toFixed(3));
    const highlights = el(
      "span",
      "highlights",
      [
        row.highlights.age !== null ? `age ${row.highlights.age}` : null,
        row.highlights.ef_percent !== null ? `EF ${row.highlights.ef_percent}%` : null,
        row.highlights.nyha ? `NYHA ${row.highlights.nyha}` : null,
        row.highlights.nt_probnp_pg_ml !== null
          ? `NT-proBNP ${row.highlights.nt_probnp_pg_ml}`
          : null,
      ]
        .filter(Boolean)
        .join(" · "),
    );
    const state = el("span", "enrollment-state", row.enrollment);

    const buttons = el("span", "row-actions");
    if (row.enrollment === "Candidate") {
      const enroll = el("button", "enroll", "Enroll") as HTMLButtonElement;
      enroll.onclick = () => actions.onEnroll(row.patient_id);
      const decline = el("button", "decline", "Decline") as HTMLButtonElement;
      decline.onclick = () => actions.onDecline(row.patient_id);
      buttons.append(enroll, decline);
    }
    const detail = el("button", "detail", "Detail") as HTMLButtonElement;
    detail.onclick = () => actions.onDetail(row.patient_id);
    buttons.append(detail);

    card.append(rank, who, probability, highlights, state, buttons);
    list.appendChild(card);
  }
  return list;
}

export function renderAlertCard(
  alert: AlertEvent,
  onAck: (alertId: string) => void,
): HTMLElement {
  const card = el("div", `alert-card severity-${alert.score.severity.toLowerCase()}`);
  card.dataset.alertId = alert.alert_id;

  const head = el("div", "alert-head");
  head.append(
    el("span", "alert-id", alert.alert_id),
    el("span", "severity", alert.score.severity),
    el("span", "patient-id", alert.patient_id),
    el("span", "timestamp", alert.created_at),
  );
  const flags = el("div", "flags");
  for (const flag of alert.score.active_flags) {
    flags.appendChild(el("span", "flag", flag));
  }
  card.append(head, flags);

  if (alert.state === "Open") {
    const ack = el("button", "ack", "Acknowledge") as HTMLButtonElement;
    ack.onclick = () => onAck(alert.alert_id);
    card.appendChild(ack);
  } else if (alert.acked_by) {
    card.appendChild(el("span", "acked-by", `by ${alert.acked_by}`));
  }
  return card;
}

export function renderBoardColumn(
  title: string,
  alerts: AlertEvent[],
  onAck: (alertId: string) => void,
): HTMLElement {
  const column = el("div", "board-column");
  column.appendChild(el("h3", undefined, `${title} (${alerts.length})`));
  for (const alert of alerts) {
    column.appendChild(renderAlertCard(alert, onAck));
  }
  return column;
}

export function renderDetail(detail: PatientDetail): HTMLElement {
  const drawer = el("div", "drawer-content");
  drawer.appendChild(el("h3", undefined, detail.patient.patient_id));
  const score = detail.score;
  drawer.appendChild(
    el("p", `score severity-${score.severity.toLowerCase()}`,
       `Score ${score.score} · ${score.severity} · ${score.location_mode_used} · at ${score.at}`),
  );
  const flags = el("div", "flags");
  if (score.active_flags.length === 0) {
    flags.appendChild(el("span", "flag none", "no active flags"));
  }
  for (const flag of score.active_flags) {
    flags.appendChild(el("span", "flag", flag));
  }
  drawer.appendChild(flags);
  const record = el("pre", "record", JSON.stringify(detail.patient, null, 2));
  drawer.appendChild(record);
  return drawer;
}

export function renderToast(kind: "error" | "info", message: string): HTMLElement {
  return el("div", `toast ${kind}`, message);
}
