/**
 * Grasp-report readout. The residuals the console shows come verbatim
 * from the coordinator's report — never from the client's own pose
 * math — so the numbers on screen are exactly the numbers the grasp
 * execution measured.
 */

import type { FingerReport, GraspReportBody } from "./messages.js";

export interface ResidualLine {
  fingerId: number;
  role: string;
  /** Euclidean norm of the per-joint errors, verbatim from the report. */
  errorNorm: number | null;
  /** Largest single per-joint error, taken from the report's entries. */
  worstJointError: number | null;
  converged: boolean;
}

export interface ResidualReadout {
  grasp: string;
  success: boolean;
  timedOut: boolean;
  durationUs: number;
  /** Largest per-joint error across all fingers; null if none reported. */
  worstJointError: number | null;
  lines: ResidualLine[];
}

function worstOf(finger: FingerReport): number | null {
  let worst: number | null = null;
  for (const error of finger.per_joint_error) {
    if (error !== null && (worst === null || error > worst)) {
      worst = error;
    }
  }
  return worst;
}

/** Distill a report into the values the panel displays, unmodified. */
export function residualReadout(report: GraspReportBody): ResidualReadout {
  const lines = report.fingers.map((finger): ResidualLine => ({
    fingerId: finger.finger_id,
    role: finger.role,
    errorNorm: finger.error_norm,
    worstJointError: worstOf(finger),
    converged: finger.converged,
  }));
  let worst: number | null = null;
  for (const line of lines) {
    if (
      line.worstJointError !== null &&
      (worst === null || line.worstJointError > worst)
    ) {
      worst = line.worstJointError;
    }
  }
  return {
    grasp: report.grasp,
    success: report.success,
    timedOut: report.timed_out,
    durationUs: report.finished_us - report.started_us,
    worstJointError: worst,
    lines,
  };
}

/**
 * Exact text for a residual value: shortest exponential form that
 * parses back to the identical number (`Number(formatResidualValue(x))
 * === x`), so the display never rounds the report away.
 */
export function formatResidualValue(value: number | null): string {
  if (value === null) {
    return "n/a";
  }
  return value.toExponential();
}

/** Multi-line panel text for a finished grasp. */
export function formatReadout(readout: ResidualReadout): string {
  const header = readout.timedOut
    ? `${readout.grasp}: timed out`
    : `${readout.grasp}: ${readout.success ? "success" : "failed"}`;
  const seconds = (readout.durationUs / 1e6).toFixed(2);
  const lines = [
    `${header} in ${seconds} s`,
    `worst joint error ${formatResidualValue(readout.worstJointError)} rad`,
  ];
  for (const line of readout.lines) {
    const mark = line.converged ? "ok" : "MISS";
    lines.push(
      `  ${line.role} (#${line.fingerId}): |e| = ` +
        `${formatResidualValue(line.errorNorm)} rad [${mark}]`,
    );
  }
  return lines.join("\n");
}
