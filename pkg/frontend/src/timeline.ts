// Conversation history as a horizontal strip of message cards. Dragging
// scrolls along the strip; zooming a card expands it to show the original
// text next to its translation for review.

export type TimelineCard = {
  utteranceId: string
  direction: 'sent' | 'received'
  at: number
  originalText: string | null
  translationText: string | null
}

export type CardLayout = {
  utteranceId: string
  scale: number
  expanded: boolean
}

const BASE_SCALE = 1
const ZOOM_SCALE = 2.4
const NEIGHBOR_SCALE = 0.6

export class TimelineModel {
  cards: TimelineCard[] = []
  focus = 0
  zoomedId: string | null = null

  /** Insert or enrich a card; partial knowledge merges in as it arrives. */
  upsert(card: Partial<TimelineCard> & { utteranceId: string }): void {
    const existing = this.cards.find((c) => c.utteranceId === card.utteranceId)
    if (existing) {
      if (card.originalText != null) existing.originalText = card.originalText
      if (card.translationText != null) existing.translationText = card.translationText
      if (card.direction) existing.direction = card.direction
      return
    }
    this.cards.push({
      utteranceId: card.utteranceId,
      direction: card.direction ?? 'received',
      at: card.at ?? 0,
      originalText: card.originalText ?? null,
      translationText: card.translationText ?? null,
    })
    this.cards.sort((a, b) => a.at - b.at)
  }

  /** Scroll by a number of card positions; clamped to the strip. */
  drag(delta: number): void {
    if (this.cards.length === 0) return
    this.focus = Math.min(Math.max(this.focus + delta, 0), this.cards.length - 1)
  }

  zoomIn(utteranceId: string): TimelineCard | null {
    const card = this.cards.find((c) => c.utteranceId === utteranceId)
    if (!card) return null
    this.zoomedId = utteranceId
    this.focus = this.cards.indexOf(card)
    return card
  }

  zoomOut(): void {
    this.zoomedId = null
  }

  zoomedCard(): TimelineCard | null {
    return this.cards.find((c) => c.utteranceId === this.zoomedId) ?? null
  }

  /** Per-card scale: the zoomed card grows, its neighbors shrink to make
   * room, everything is uniform when zoomed out. */
  layout(): CardLayout[] {
    return this.cards.map((card) => {
      if (this.zoomedId === null) {
        return { utteranceId: card.utteranceId, scale: BASE_SCALE, expanded: false }
      }
      if (card.utteranceId === this.zoomedId) {
        return { utteranceId: card.utteranceId, scale: ZOOM_SCALE, expanded: true }
      }
      return { utteranceId: card.utteranceId, scale: NEIGHBOR_SCALE, expanded: false }
    })
  }
}
