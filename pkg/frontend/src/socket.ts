/**
 * One WebSocket feeding the session view. Inbound frames are validated;
 * a frame that fails validation surfaces as a banner error while the last
 * good frame stays on screen. Outbound messages validate before sending.
 */

import { encodeClientMsg, parseServerFrame, type ClientMsg } from "./protocol";
import { SessionView } from "./session";

export class TeleopSocket {
  private ws: WebSocket | null = null;

  constructor(readonly view: SessionView) {}

  connect(url: string): void {
    this.close();
    this.view.status = "connecting";
    const ws = new WebSocket(url);
    this.ws = ws;
    ws.onopen = () => {
      this.view.status = "connected";
    };
    ws.onclose = () => {
      if (this.ws === ws) {
        this.view.status = "disconnected";
      }
    };
    ws.onmessage = (ev: MessageEvent) => {
      this.handleText(String(ev.data));
    };
  }

  /** Exposed separately so tests can drive it without a real socket. */
  handleText(text: string): void {
    try {
      this.view.absorb(parseServerFrame(text));
    } catch (err) {
      this.view.lastError = {
        type: "error",
        code: "bad_frame",
        message: String(err),
      };
    }
  }

  send(msg: ClientMsg): boolean {
    if (this.ws === null || this.ws.readyState !== WebSocket.OPEN) {
      return false;
    }
    this.ws.send(encodeClientMsg(msg));
    return true;
  }

  close(): void {
    if (this.ws !== null) {
      const ws = this.ws;
      this.ws = null;
      ws.close();
    }
    this.view.status = "disconnected";
  }
}
