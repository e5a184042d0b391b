/** Thin WebSocket wrapper: encodes outbound actions, decodes inbound
 * frames into the store. The socket factory is injectable for tests.
 */

import {
  ControlAction,
  Point,
  Polyline,
  ProtocolError,
  ReviewDecision,
  decodeServer,
  encodeControl,
  encodeReplay,
  encodeReview,
  encodeSubmitGoal,
} from "./protocol.js";
import { SessionStore } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export class BridgeClient {
  private socket: SocketLike | null = null;

  constructor(
    readonly store: SessionStore,
    private readonly factory: SocketFactory,
  ) {}

  connect(url: string): void {
    const sock = this.factory(url);
    this.socket = sock;
    sock.onopen = () => this.store.setConnected(true);
    sock.onclose = () => this.store.setConnected(false);
    sock.onmessage = (ev) => {
      try {
        this.store.apply(decodeServer(ev.data));
      } catch (err) {
        if (!(err instanceof ProtocolError)) throw err;
        this.store.apply({
          type: "error",
          code: "bad_message",
          message: err.message,
        });
      }
    };
  }

  disconnect(): void {
    this.socket?.close();
    this.socket = null;
  }

  private send(payload: string): void {
    if (!this.socket) throw new ProtocolError("not connected");
    this.socket.send(payload);
  }

  submitGoal(points: Polyline, grasp: Point): void {
    this.send(encodeSubmitGoal(points, grasp));
  }

  control(action: ControlAction): void {
    this.send(encodeControl(action));
  }

  review(decision: ReviewDecision, goals?: Polyline[]): void {
    this.send(encodeReview(decision, goals));
  }

  replay(log: string): void {
    this.send(encodeReplay(log));
  }
}
