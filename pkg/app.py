"""
車内マルチゾーン音声分離ビューア
デモ用の車室混合音（またはWAV）をゾーンごとに分離し、スペクトログラムと音声を確認する
"""
import io
import os

import numpy as np
import streamlit as st

from src.audio.wav_io import load_wav, save_wav
from src.config import MODES
from src.evaluation.metrics import sisnr, zone_reference
from src.evaluation.spectrogram_image import render_spectrograms
from src.exceptions import SeparationError
from src.nn.weights import init_random
from src.pipeline.separation import StageTimings, describe_latency, run_stream, separate_offline
from src.schemas import DatasetSpec, PipelineConfig
from src.sim.batch import simulate_utterance
from src.utils.io import make_run_dir, zone_wav_path
from src.utils.run_logger import RunLogger

MODE_LABELS = {
    "offline": "DualSep（オフライン）",
    "streaming": "DualSep（ストリーミング）",
    "dsp-only": "BF + IVA のみ",
    "bf-only": "遅延和BFのみ",
}

st.set_page_config(page_title="DualSep Viewer", layout="wide")
st.title("🚗 In-Car Multi-Zone Speech Separation")
st.caption("遅延和ビームフォーマ → IVA → デュアルエンコーダNN による6ゾーン分離")

with st.expander("📖 使い方", expanded=False):
    st.markdown("""
    ### 📝 3ステップで分離

    **Step 1: サイドバーで設定**
    - 処理モード（DualSep / DSPのみ）とモデル構成を選択

    **Step 2: 入力を用意**
    - デモ用の車室混合音を生成するか、24ch WAV のパスを指定

    **Step 3: 分離実行**
    - 「🚀 分離する」ボタンで実行し、ゾーンごとのスペクトログラムと音声を確認
    """)

# ==== Sidebar: Settings ====
st.sidebar.header("⚙️ 設定")

mode = st.sidebar.selectbox("処理モード", options=list(MODE_LABELS), format_func=lambda x: MODE_LABELS[x])
variant = st.sidebar.selectbox("モデル", ["S", "L"], help="S: 加算で融合 / L: 連結 + 線形層で融合")
causal = st.sidebar.checkbox("因果モデル", value=True, disabled=mode == "streaming",
                             help="ストリーミングでは常に因果モデル")
weights_path = st.sidebar.text_input("重みファイル（任意）", "",
                                     help="空欄なら乱数初期化の重みを使う（分離性能はない）")
weight_seed = st.sidebar.number_input("重みのシード", min_value=0, value=0, step=1)

stages, run_mode, iva_mode = MODES[mode]
pipeline = PipelineConfig.model_validate({
    "stages": stages,
    "mode": run_mode,
    "iva_mode": iva_mode or "batch",
    "model": {"variant": variant, "causal": causal or mode == "streaming"},
    "weights_path": weights_path or None,
})
latency = describe_latency(pipeline)
st.sidebar.info(f"アルゴリズム遅延: **{latency['total_ms']:.0f} ms**")

# ==== Main: Input ====
st.markdown("---")
st.markdown("### 📝 Step 2: 入力")
source = st.radio("入力", ["デモ混合音を生成", "WAVファイル"], horizontal=True)
demo_seed, demo_duration, occupied, wav_path = 0, 3.0, 3, ""
if source == "デモ混合音を生成":
    col1, col2, col3 = st.columns(3)
    demo_seed = int(col1.number_input("シード", min_value=0, value=0, step=1))
    demo_duration = float(col2.slider("長さ [秒]", 1.0, 6.0, 3.0, 0.5))
    occupied = int(col3.slider("話者数", 1, 6, 3))
else:
    wav_path = st.text_input("24ch WAV のパス", placeholder="data/audio/utt-00000_mix.wav")

st.markdown("### 🚀 Step 3: 分離実行")
run_btn = st.button("🚀 分離する", type="primary", use_container_width=True)

if run_btn:
    run_dir = make_run_dir(f"separate-{mode}")
    run_logger = RunLogger(run_dir, "app", echo=False)
    run_logger.set_context(mode=mode, source=source, config=pipeline.model_dump(mode="json"))

    refs, active = None, []
    with st.status("📥 入力を準備中...", expanded=False) as s:
        try:
            if source == "デモ混合音を生成":
                spec = DatasetSpec(count=1, seed=demo_seed, duration=demo_duration, occupancy=(occupied, occupied))
                item = simulate_utterance(spec, 0)
                mix, refs, active = item.mix, item.refs, list(item.scene.occupied)
            else:
                mix = load_wav(wav_path, expected_rate=pipeline.sample_rate, layout="raw_mics",
                               channel_layout=pipeline.layout)
            s.update(label="✅ 入力準備完了", state="complete")
        except (SeparationError, OSError, ValueError) as exc:
            s.update(label=f"❌ 入力の準備に失敗: {exc}", state="error")
            run_logger.add_step("input", "error", message=str(exc))
            st.stop()
    run_logger.add_step("input", "success", detail={"channels": mix.channels, "samples": mix.length,
                                                     "active_zones": active})

    weights = None
    if pipeline.stages == "dualsep" and not pipeline.weights_path:
        weights = init_random(pipeline.model, int(weight_seed))
        st.warning("⚠️ 乱数初期化の重みで実行しています（出力は分離されていません）")

    timings = StageTimings()
    with st.spinner(f"{MODE_LABELS[mode]} で分離中..."):
        try:
            if pipeline.mode == "streaming":
                zones = run_stream(mix, pipeline, weights=weights, timings=timings)
            else:
                zones = separate_offline(mix, pipeline, weights=weights, timings=timings)
        except (SeparationError, OSError) as exc:
            st.error("❌ 分離エラー")
            st.code(str(exc))
            run_logger.add_step("separate", "error", message=str(exc), detail=getattr(exc, "detail", None))
            st.stop()
    rtf = timings.total / mix.duration
    run_logger.add_step("separate", "success", detail={"timings": timings.as_dict(), "rtf": rtf})

    st.markdown("---")
    st.success(f"✅ 分離完了！ RTF = {rtf:.3f}")
    st.json(timings.as_dict())

    scores = {}
    if refs is not None:
        p = pipeline.layout.mics_per_zone
        for zone, image in zip(active, refs):
            ref = zone_reference(image)
            scores[zone] = (sisnr(mix.samples[zone * p], ref), sisnr(zones[zone].samples[0], ref))
        run_logger.add_step("score", "success", detail={f"zone{z + 1}": v for z, v in scores.items()})

    # === ゾーンごとの表示 ===
    st.subheader("🎧 ゾーンごとの出力")
    cols = st.columns(3)
    for z, signal in enumerate(zones):
        with cols[z % 3]:
            st.markdown(f"**Zone {z + 1}**" + (" 🗣️" if z in active else ""))
            st.image(render_spectrograms(signal, pipeline.stft)[0], use_column_width=True)
            if z in scores:
                before, after = scores[z]
                st.caption(f"SiSNR {before:.1f} dB → {after:.1f} dB")
            path = zone_wav_path(run_dir, z)
            save_wav(signal, path)
            with open(path, "rb") as f:
                data = f.read()
            st.audio(data, format="audio/wav")
            st.download_button(f"📥 zone{z + 1}.wav", data=data, file_name=os.path.basename(path),
                               mime="audio/wav", key=f"dl-{z}")

    with st.expander("📊 入力マイクのスペクトログラム（ゾーン先頭マイク）", expanded=False):
        p = pipeline.layout.mics_per_zone
        buf_cols = st.columns(3)
        for z in range(pipeline.layout.zones):
            with buf_cols[z % 3]:
                image = render_spectrograms(mix.channel(z * p), pipeline.stft)[0]
                buf = io.BytesIO()
                image.save(buf, format="PNG")
                st.image(buf.getvalue(), caption=f"mic {z * p + 1}", use_column_width=True)

    run_logger.add_step("display_results", "success", detail={"zones": len(zones), "mean_abs": float(
        np.mean([np.abs(z.samples).mean() for z in zones]))})
    st.success(f"✅ 実行ログを保存しました: `{run_dir}`")

# ==== フッター ====
st.markdown("---")
st.markdown("""
<div style="text-align: center; color: #666; padding: 20px;">
    <p>🚗 DualSep Viewer - 車内6ゾーン音声分離</p>
    <p>遅延和BF / IVA / デュアルエンコーダ + 三経路モデリング</p>
</div>
""", unsafe_allow_html=True)
