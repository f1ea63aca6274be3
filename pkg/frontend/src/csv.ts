/**
 * Strict readers for the simulator's CSV schemas.
 *
 *   metrics.csv  round,participants,accuracy,loss_ce,loss_he,loss_var,loss_total,grad_sq_norm
 *   spectrum.csv run_label,rank,sigma,sigma_normalized
 *   sweep.csv    axis,value,seed,final_accuracy
 *
 * Any schema violation throws SchemaError naming the file and the problem;
 * the CLI maps that to exit code 1.
 */

import { readFileSync } from "fs";

export class SchemaError extends Error {}

export interface LabeledInput {
  path: string;
  label: string;
}

/** Split "path[:label]" CLI inputs; the label defaults to the path stem. */
export function parseInputArg(arg: string): LabeledInput {
  const idx = arg.lastIndexOf(":");
  // windows-style drive letters are out of scope; a lone trailing colon is not a label
  if (idx > 0 && idx < arg.length - 1) {
    return { path: arg.slice(0, idx), label: arg.slice(idx + 1) };
  }
  const stem = arg.replace(/\.[^./]+$/, "").split("/").pop() ?? arg;
  return { path: arg, label: stem };
}

/** Suffix-disambiguate duplicate labels across inputs (a, a#2, a#3, ...). */
export function disambiguate(inputs: LabeledInput[]): LabeledInput[] {
  const seen = new Map<string, number>();
  return inputs.map(({ path, label }) => {
    const n = (seen.get(label) ?? 0) + 1;
    seen.set(label, n);
    return { path, label: n === 1 ? label : `${label}#${n}` };
  });
}

function readRows(path: string, requiredHeader: string[]): string[][] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new Error(`cannot read ${path}: ${(err as Error).message}`);
  }
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new SchemaError(`${path}: empty file`);
  }
  const header = lines[0].split(",");
  for (const col of requiredHeader) {
    if (!header.includes(col)) {
      throw new SchemaError(`${path}: missing column '${col}'`);
    }
  }
  const rows = lines.slice(1).map((line) => line.split(","));
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no rows`);
  }
  for (const row of rows) {
    if (row.length !== header.length) {
      throw new SchemaError(`${path}: ragged row (${row.length} fields, header has ${header.length})`);
    }
  }
  return [header, ...rows];
}

function num(path: string, col: string, raw: string): number {
  const v = Number(raw);
  if (!Number.isFinite(v)) {
    throw new SchemaError(`${path}: column '${col}' has non-numeric value '${raw}'`);
  }
  return v;
}

export interface MetricsRow {
  round: number;
  accuracy: number;
}

export function readMetrics(path: string): MetricsRow[] {
  const [header, ...rows] = readRows(path, ["round", "accuracy"]);
  const iRound = header.indexOf("round");
  const iAcc = header.indexOf("accuracy");
  return rows.map((r) => ({
    round: num(path, "round", r[iRound]),
    accuracy: num(path, "accuracy", r[iAcc]),
  }));
}

export interface SpectrumRow {
  runLabel: string;
  rank: number;
  sigmaNormalized: number;
}

export function readSpectrum(path: string): SpectrumRow[] {
  const [header, ...rows] = readRows(path, ["run_label", "rank", "sigma", "sigma_normalized"]);
  const iLabel = header.indexOf("run_label");
  const iRank = header.indexOf("rank");
  const iNorm = header.indexOf("sigma_normalized");
  return rows.map((r) => ({
    runLabel: r[iLabel],
    rank: num(path, "rank", r[iRank]),
    sigmaNormalized: num(path, "sigma_normalized", r[iNorm]),
  }));
}

export interface SweepRow {
  axis: string;
  value: string;
  seed: number;
  finalAccuracy: number;
}

export function readSweep(path: string): SweepRow[] {
  const [header, ...rows] = readRows(path, ["axis", "value", "seed", "final_accuracy"]);
  const iAxis = header.indexOf("axis");
  const iValue = header.indexOf("value");
  const iSeed = header.indexOf("seed");
  const iAcc = header.indexOf("final_accuracy");
  return rows.map((r) => ({
    axis: r[iAxis],
    value: r[iValue],
    seed: num(path, "seed", r[iSeed]),
    finalAccuracy: num(path, "final_accuracy", r[iAcc]),
  }));
}
