// Console wiring: two screens (Enrollment, Alert board) plus a patient
// drawer. All mutations render only after the server confirms them.

import { ApiClient, ApiRequestError } from "./api.js";
import { renderBoardColumn, renderDetail, renderQueue, renderToast } from "./render.js";
import { AlertStream } from "./socket.js";
import { AlertBoard, EnrollmentQueue } from "./state.js";
import type { AlertEvent } from "./types.js";

const api = new ApiClient("");
const board = new AlertBoard();
const queue = new EnrollmentQueue();

const root = {
  tabs: document.getElementById("tabs")!,
  queue: document.getElementById("queue-screen")!,
  board: document.getElementById("board-screen")!,
  drawer: document.getElementById("drawer")!,
  toasts: document.getElementById("toasts")!,
  status: document.getElementById("connection-status")!,
  token: document.getElementById("token-field") as HTMLInputElement,
};

function toast(kind: "error" | "info", message: string): void {
  const node = renderToast(kind, message);
  root.toasts.appendChild(node);
  setTimeout(() => node.remove(), 6000);
}

function showScreen(name: "queue" | "board"): void {
  root.queue.hidden = name !== "queue";
  root.board.hidden = name !== "board";
  for (const button of Array.from(root.tabs.querySelectorAll("button"))) {
    button.classList.toggle("active", button.dataset.screen === name);
  }
}

// -- enrollment screen -------------------------------------------------------

async function refreshQueue(): Promise<void> {
  try {
    queue.replace(await api.queue());
    paintQueue();
    root.queue.querySelector(".offline-banner")?.remove();
  } catch (error) {
    const banner = document.createElement("div");
    banner.className = "offline-banner";
    banner.textContent = "Cannot reach the server. ";
    const retry = document.createElement("button");
    retry.textContent = "Retry";
    retry.onclick = () => void refreshQueue();
    banner.appendChild(retry);
    root.queue.prepend(banner);
    console.error("queue fetch failed", error);
  }
}

function paintQueue(): void {
  root.queue.querySelector(".queue")?.remove();
  root.queue.appendChild(
    renderQueue(queue.items(), {
      onEnroll: (patientId) => void mutateEnrollment(patientId, "enroll"),
      onDecline: (patientId) => void mutateEnrollment(patientId, "decline"),
      onDetail: (patientId) => void openDrawer(patientId),
    }),
  );
}

async function mutateEnrollment(patientId: string, action: "enroll" | "decline"): Promise<void> {
  try {
    if (action === "enroll") await api.enroll(patientId);
    else await api.decline(patientId);
  } catch (error) {
    if (error instanceof ApiRequestError && error.status === 409) {
      toast("error", `${patientId}: state changed concurrently (${error.code})`);
    } else {
      toast("error", `${patientId}: ${String(error)}`);
    }
  }
  // converge to server truth either way
  await refreshQueue();
}

async function openDrawer(patientId: string): Promise<void> {
  try {
    const detail = await api.patient(patientId);
    root.drawer.replaceChildren(renderDetail(detail));
    root.drawer.hidden = false;
    const close = document.createElement("button");
    close.className = "close-drawer";
    close.textContent = "Close";
    close.onclick = () => {
      root.drawer.hidden = true;
    };
    root.drawer.prepend(close);
  } catch (error) {
    toast("error", `detail fetch failed: ${String(error)}`);
  }
}

// -- alert board ------------------------------------------------------------

function paintBoard(): void {
  const columns = document.createElement("div");
  columns.className = "board";
  columns.append(
    renderBoardColumn("Open", board.column("Open"), (alertId) => void ackAlert(alertId)),
    renderBoardColumn("Acknowledged", board.column("Acknowledged"), () => undefined),
    renderBoardColumn("Resolved", board.column("Resolved"), () => undefined),
  );
  root.board.querySelector(".board")?.remove();
  root.board.appendChild(columns);
}

async function ackAlert(alertId: string): Promise<void> {
  try {
    const confirmed = await api.ack(alertId, clinicianId());
    board.upsert(confirmed); // render only the server's answer
    paintBoard();
  } catch (error) {
    if (error instanceof ApiRequestError && error.status === 409) {
      toast("error", `alert ${alertId} already moved on (${error.code})`);
      await reconcileAlerts();
    } else {
      toast("error", `ack failed: ${String(error)}`);
    }
  }
}

async function reconcileAlerts(): Promise<void> {
  try {
    board.merge(await api.alerts());
    paintBoard();
  } catch (error) {
    console.error("alert reconciliation failed", error);
  }
}

function clinicianId(): string {
  return (document.getElementById("clinician-field") as HTMLInputElement).value || "clinician";
}

// -- wiring -------------------------------------------------------------------

function socketUrl(): string {
  const protocol = location.protocol === "https:" ? "wss" : "ws";
  return `${protocol}://${location.host}/v1/stream/alerts`;
}

const stream = new AlertStream({
  url: socketUrl(),
  factory: (url) => new WebSocket(url) as never,
  onEvent: (event: AlertEvent) => {
    board.upsert(event);
    paintBoard();
  },
  onConnect: () => void reconcileAlerts(),
  onStatus: (status) => {
    root.status.textContent = status;
    root.status.className = `status-${status}`;
  },
});

root.token.onchange = () => api.setToken(root.token.value.trim());
for (const button of Array.from(root.tabs.querySelectorAll("button"))) {
  button.addEventListener("click", () => showScreen(button.dataset.screen as "queue" | "board"));
}
const refresh = document.getElementById("refresh-queue");
if (refresh) refresh.addEventListener("click", () => void refreshQueue());

showScreen("queue");
void refreshQueue();
paintBoard();
stream.start();
