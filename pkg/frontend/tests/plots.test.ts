import { execFileSync } from "child_process";
import { mkdtempSync, readFileSync, writeFileSync, existsSync, statSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";

import { disambiguate, parseInputArg, readMetrics, readSweep, SchemaError } from "../src/csv.js";
import { accuracyCurvesOption, spectrumOption, sweepBarsOption } from "../src/plots.js";
import { renderSvg, writeImage, OutputError } from "../src/render.js";

const METRICS = [
  "round,participants,accuracy,loss_ce,loss_he,loss_var,loss_total,grad_sq_norm",
  "0,0;1,0.125,2.302,0,0,2.302,10.5",
  "1,0;1,0.25,1.9,0,0,1.9,7.25",
  "2,0;1,0.4375,1.5,0,0,1.5,3.125",
].join("\n") + "\n";

const SPECTRUM = [
  "run_label,rank,sigma,sigma_normalized",
  "fedavg_seed1,0,4,1",
  "fedavg_seed1,1,2,0.5",
  "fedavg_seed1,2,1,0.25",
].join("\n") + "\n";

const SWEEP = [
  "axis,value,seed,final_accuracy",
  "rho,0.1,1,0.2",
  "rho,0.1,2,0.3",
  "rho,0.5,1,0.5",
  "rho,0.5,2,0.5",
  "rho,1.0,1,0.7",
  "rho,1.0,2,0.8",
].join("\n") + "\n";

function tmpFile(name: string, contents: string): string {
  const dir = mkdtempSync(join(tmpdir(), "plots-"));
  const p = join(dir, name);
  writeFileSync(p, contents);
  return p;
}

describe("input arg parsing", () => {
  it("splits path:label", () => {
    expect(parseInputArg("a/b/metrics.csv:fedavg")).toEqual({
      path: "a/b/metrics.csv",
      label: "fedavg",
    });
  });

  it("defaults the label to the file stem", () => {
    expect(parseInputArg("runs/seed_1/metrics.csv").label).toBe("metrics");
  });

  it("suffix-disambiguates colliding labels", () => {
    const out = disambiguate([
      { path: "x", label: "run" },
      { path: "y", label: "run" },
    ]);
    expect(out.map((o) => o.label)).toEqual(["run", "run#2"]);
  });
});

describe("accuracy curves", () => {
  it("plots series equal to the CSV values", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const option = accuracyCurvesOption([{ path: p, label: "runA" }]);
    const series = option.series as any[];
    expect(series).toHaveLength(1);
    expect(series[0].name).toBe("runA");
    expect(series[0].data).toEqual([
      [0, 0.125],
      [1, 0.25],
      [2, 0.4375],
    ]);
    const fromCsv = readMetrics(p).map((r) => [r.round, r.accuracy]);
    expect(series[0].data).toEqual(fromCsv);
  });

  it("two identical inputs give two coincident series", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const option = accuracyCurvesOption([
      { path: p, label: "a" },
      { path: p, label: "b" },
    ]);
    const series = option.series as any[];
    expect(series).toHaveLength(2);
    expect(series[0].data).toEqual(series[1].data);
  });

  it("rejects a file missing the accuracy column", () => {
    const p = tmpFile("bad.csv", "round,acc\n0,0.5\n");
    expect(() => accuracyCurvesOption([{ path: p, label: "x" }])).toThrowError(
      /missing column 'accuracy'/,
    );
  });
});

describe("spectrum", () => {
  it("flat spectrum of an orthonormal classifier plots at 1.0", () => {
    const flat = [
      "run_label,rank,sigma,sigma_normalized",
      "freeze,0,1,1",
      "freeze,1,1,1",
      "freeze,2,1,1",
    ].join("\n") + "\n";
    const p = tmpFile("spectrum.csv", flat);
    const option = spectrumOption([{ path: p, label: "s" }]);
    const series = option.series as any[];
    expect(series).toHaveLength(1);
    expect(series[0].data.map((d: number[]) => d[1])).toEqual([1, 1, 1]);
  });

  it("uses a log y axis and one series per run_label", () => {
    const two = SPECTRUM + "univarfl_seed1,0,8,1\nunivarfl_seed1,1,1,0.125\n";
    const p = tmpFile("spectrum.csv", two);
    const option = spectrumOption([{ path: p, label: "s" }]);
    expect((option.yAxis as any).type).toBe("log");
    const series = option.series as any[];
    expect(series.map((s) => s.name).sort()).toEqual(["fedavg_seed1", "univarfl_seed1"]);
  });

  it("rejects header-only files", () => {
    const p = tmpFile("spectrum.csv", "run_label,rank,sigma,sigma_normalized\n");
    expect(() => spectrumOption([{ path: p, label: "s" }])).toThrowError(/no rows/);
  });
});

describe("sweep bars", () => {
  it("one bar group per axis value with mean heights", () => {
    const p = tmpFile("sweep.csv", SWEEP);
    const option = sweepBarsOption([{ path: p, label: "fedavg" }]);
    expect((option.xAxis as any).data).toEqual(["0.1", "0.5", "1.0"]);
    const bars = (option.series as any[]).filter((s) => s.type === "bar");
    expect(bars).toHaveLength(1);
    expect(bars[0].data).toEqual([0.25, 0.5, 0.75]);
    const rows = readSweep(p);
    expect(rows).toHaveLength(6);
  });

  it("zero std gives zero-height whiskers", () => {
    const p = tmpFile("sweep.csv", SWEEP);
    const option = sweepBarsOption([{ path: p, label: "x" }]);
    const whiskers = (option.series as any[]).find((s) => s.type === "custom");
    const mid = whiskers.data[1]; // rho=0.5 has two equal seeds
    expect(mid[1]).toBeCloseTo(mid[2], 12);
  });

  it("disambiguates colliding labels across files", () => {
    const p = tmpFile("sweep.csv", SWEEP);
    const option = sweepBarsOption([
      { path: p, label: "same" },
      { path: p, label: "same" },
    ]);
    const bars = (option.series as any[]).filter((s) => s.type === "bar");
    expect(bars.map((b) => b.name)).toEqual(["same", "same#2"]);
  });
});

describe("rendering", () => {
  it("produces a nonzero svg", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const svg = renderSvg(accuracyCurvesOption([{ path: p, label: "a" }]));
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg.length).toBeGreaterThan(500);
  });

  it("writes the file at the exact requested path", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const out = p.replace("metrics.csv", "out.svg");
    writeImage(accuracyCurvesOption([{ path: p, label: "a" }]), out);
    expect(existsSync(out)).toBe(true);
    expect(statSync(out).size).toBeGreaterThan(0);
  });

  it("rejects unsupported output extensions", () => {
    const p = tmpFile("metrics.csv", METRICS);
    expect(() =>
      writeImage(accuracyCurvesOption([{ path: p, label: "a" }]), "/tmp/nope.png"),
    ).toThrowError(OutputError);
  });

  it("does not mutate its inputs", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const before = readFileSync(p, "utf-8");
    renderSvg(accuracyCurvesOption([{ path: p, label: "a" }]));
    expect(readFileSync(p, "utf-8")).toBe(before);
  });
});

describe("cli", () => {
  const cli = join(__dirname, "..", "dist", "cli.js");

  function runCli(args: string[]): { code: number; stderr: string } {
    try {
      execFileSync("node", [cli, ...args], { stdio: ["ignore", "pipe", "pipe"] });
      return { code: 0, stderr: "" };
    } catch (err: any) {
      return { code: err.status ?? -1, stderr: String(err.stderr) };
    }
  }

  it("renders accuracy curves end to end", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const out = p.replace("metrics.csv", "acc.svg");
    const res = runCli(["accuracy-curves", "--in", `${p}:run`, "--out", out]);
    expect(res.code).toBe(0);
    expect(statSync(out).size).toBeGreaterThan(0);
  });

  it("renders spectra end to end", () => {
    const p = tmpFile("spectrum.csv", SPECTRUM);
    const out = p.replace("spectrum.csv", "spec.svg");
    expect(runCli(["spectrum", "--in", p, "--out", out]).code).toBe(0);
    expect(statSync(out).size).toBeGreaterThan(0);
  });

  it("renders sweep bars end to end", () => {
    const p = tmpFile("sweep.csv", SWEEP);
    const out = p.replace("sweep.csv", "bars.svg");
    expect(runCli(["sweep-bars", "--in", `${p}:fedavg`, "--out", out]).code).toBe(0);
    expect(statSync(out).size).toBeGreaterThan(0);
  });

  it("exits 1 on schema violations naming the column", () => {
    const p = tmpFile("bad.csv", "round,notacc\n0,1\n");
    const res = runCli(["accuracy-curves", "--in", p, "--out", "/tmp/a.svg"]);
    expect(res.code).toBe(1);
    expect(res.stderr).toContain("accuracy");
  });

  it("exits 2 on unwritable output", () => {
    const p = tmpFile("metrics.csv", METRICS);
    const res = runCli(["accuracy-curves", "--in", p, "--out", "/nonexistent-dir/x.svg"]);
    expect(res.code).toBe(2);
  });

  it("exits 2 on missing input file", () => {
    const res = runCli(["spectrum", "--in", "/definitely/not/there.csv", "--out", "/tmp/s.svg"]);
    expect(res.code).toBe(2);
  });
});
