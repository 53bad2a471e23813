/** Client-side session state: one received ServerState per rendered tick,
 * the last sent action, and window-limited Diff/Score series. */

import { Connection, ConnectionStatus } from "./connection.js";
import { InputCapture } from "./input.js";
import { RollingSeries } from "./plots.js";
import {
  actionMessage,
  ClientControl,
  controlMessage,
  ServerState,
} from "./protocol.js";

export interface SessionSnapshot {
  status: ConnectionStatus;
  statusDetail: string;
  state: ServerState | null;
  /** The action displayed is always the last ClientAction actually sent. */
  sentAction: number[] | null;
  paused: boolean;
  condition: string;
  expertWeight: number;
  ticksRendered: number;
}

export class SessionView {
  readonly diffSeries: RollingSeries;
  readonly scoreSeries: RollingSeries;
  readonly input: InputCapture;
  connection: Connection | null = null;

  private state: ServerState | null = null;
  private sentAction: number[] | null = null;
  private status: ConnectionStatus = "closed";
  private statusDetail = "";
  private ticksRendered = 0;
  private lastTick: number | null = null;

  constructor(
    readonly dims: number,
    readonly tickSeconds = 0.05,
    plotWindow = 2000,
  ) {
    this.diffSeries = new RollingSeries(plotWindow);
    this.scoreSeries = new RollingSeries(plotWindow);
    this.input = new InputCapture(dims);
  }

  /** Handle one ServerState: exactly one rendered tick per received state. */
  onState(state: ServerState): void {
    if (this.lastTick !== null && state.tick === this.lastTick) {
      // control acknowledgement for a tick already rendered
      this.state = state;
      return;
    }
    this.lastTick = state.tick;
    this.state = state;
    this.ticksRendered += 1;
    this.diffSeries.push(state.tick, state.last_diff);
    this.scoreSeries.push(state.tick, state.episode_stats.score);
    if (!state.paused && this.connection) {
      const action = this.input.sample(this.tickSeconds);
      if (this.connection.send(actionMessage(state.tick, action))) {
        this.sentAction = action;
      }
    }
  }

  onStatus(status: ConnectionStatus, detail?: string): void {
    this.status = status;
    if (detail !== undefined) this.statusDetail = detail;
    if (status !== "open") this.input.smoother.reset();
  }

  sendControl(command: ClientControl["command"], condition?: string): boolean {
    if (!this.connection) return false;
    const ok = this.connection.send(controlMessage(command, condition));
    if (ok && (command === "reset" || command === "set_condition")) {
      this.diffSeries.clear();
      this.scoreSeries.clear();
    }
    return ok;
  }

  snapshot(): SessionSnapshot {
    return {
      status: this.status,
      statusDetail: this.statusDetail,
      state: this.state,
      sentAction: this.sentAction ? [...this.sentAction] : null,
      paused: this.state?.paused ?? true,
      condition: this.state?.condition ?? "—",
      expertWeight: this.state?.expert_weight ?? 0,
      ticksRendered: this.ticksRendered,
    };
  }
}
