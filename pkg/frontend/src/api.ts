// Thin REST client. Mutations resolve only on a server-confirmed response;
// errors carry the server's stable error code so the UI can react (e.g.
// conflict toasts on concurrent state changes).

import type { AlertEvent, PatientDetail, QueueItem } from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(detail);
  }
}

export class ApiClient {
  constructor(
    private base: string = "",
    private token: string = "",
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "http_error";
      let detail = `${response.status}`;
      try {
        const payload = await response.json();
        code = payload.error ?? code;
        detail = payload.detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiRequestError(response.status, code, detail);
    }
    return (await response.json()) as T;
  }

  queue(): Promise<QueueItem[]> {
    return this.request("GET", "/v1/stratify/queue");
  }

  enroll(patientId: string): Promise<unknown> {
    return this.request("POST", `/v1/patients/${patientId}/enroll`);
  }

  decline(patientId: string): Promise<unknown> {
    return this.request("POST", `/v1/patients/${patientId}/decline`);
  }

  patient(patientId: string): Promise<PatientDetail> {
    return this.request("GET", `/v1/patients/${patientId}`);
  }

  alerts(state?: string): Promise<AlertEvent[]> {
    const query = state ? `?state=${encodeURIComponent(state)}` : "";
    return this.request("GET", `/v1/alerts${query}`);
  }

  ack(alertId: string, clinicianId: string): Promise<AlertEvent> {
    return this.request("POST", `/v1/alerts/${alertId}/ack`, {
      clinician_id: clinicianId,
    });
  }

  registerDevice(kind: string, patientId: string): Promise<{ device_id: string; token: string }> {
    return this.request("POST", "/v1/devices", { kind, patient_id: patientId });
  }
}
